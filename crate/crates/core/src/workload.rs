//! Synthetic reference workload: a captioned corpus drawn from a few
//! semantic domains and a Poisson-arrival prompt trace over the same
//! vocabulary.
//!
//! Captions fill a per-domain template from single-word slot vocabularies.
//! Trace prompts come in four kinds: a verbatim corpus caption, a corpus
//! caption with some slots redrawn, a fresh caption from a corpus domain, and
//! a caption from a domain the corpus does not cover. The kind mix and the
//! number of redrawn slots shape the dispatch mix the cache sees.

use rand::distr::weighted::WeightedIndex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::simulator::TraceRequest;

/// A caption template with `{0}`, `{1}`, … slot markers, one per slot
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: &'static str,
    pub template: &'static str,
    pub slots: Vec<&'static [&'static str]>,
}

impl Domain {
    fn render(&self, picks: &[usize]) -> String {
        let mut s = self.template.to_owned();
        for (i, (slot, &p)) in self.slots.iter().zip(picks).enumerate() {
            s = s.replace(&format!("{{{i}}}"), slot[p]);
        }
        s
    }

    /// Appends three more adjective-noun detail slots sharing the vocabulary
    /// of slots 5 and 6.
    fn with_repeated_details(mut self) -> Self {
        let (adj, noun) = (self.slots[5], self.slots[6]);
        self.slots.extend([adj, noun, adj, noun, adj, noun]);
        self
    }

    fn draw(&self, rng: &mut impl Rng) -> Vec<usize> {
        self.slots.iter().map(|slot| rng.random_range(0..slot.len())).collect()
    }
}

pub fn reference_domains() -> Vec<Domain> {
    vec![
        Domain {
            name: "street",
            template: "{0} {1} {2} near {3}, {5} {6}, {7} {8}, {9} {10}, {11} {12}, {4}",
            slots: vec![
                &[
                    "red", "blue", "vintage", "rusty", "shiny", "yellow", "black", "white", "electric", "tiny",
                    "battered", "modern", "silver", "muddy", "orange", "classic", "dented", "polished", "pink",
                    "armored",
                ],
                &[
                    "car",
                    "bus",
                    "taxi",
                    "bicycle",
                    "truck",
                    "motorcycle",
                    "tram",
                    "scooter",
                    "van",
                    "train",
                    "jeep",
                    "limousine",
                    "tractor",
                    "ambulance",
                    "firetruck",
                    "minivan",
                ],
                &[
                    "parked",
                    "waiting",
                    "driving",
                    "turning",
                    "stopped",
                    "speeding",
                    "idling",
                    "passing",
                    "reversing",
                    "crossing",
                    "merging",
                    "honking",
                ],
                &[
                    "downtown",
                    "crosswalk",
                    "highway",
                    "alley",
                    "bridge",
                    "tunnel",
                    "harbor",
                    "roundabout",
                    "plaza",
                    "boulevard",
                    "overpass",
                    "depot",
                    "garage",
                    "riverside",
                    "suburbs",
                    "waterfront",
                    "junction",
                    "underpass",
                    "marketplace",
                    "parkway",
                ],
                &[
                    "cinematic",
                    "photorealistic",
                    "grainy",
                    "monochrome",
                    "panoramic",
                    "noir",
                    "polaroid",
                    "hdr",
                    "documentary",
                    "overexposed",
                    "analog",
                    "kodachrome",
                ],
                &[
                    "wet",
                    "glowing",
                    "faded",
                    "crowded",
                    "empty",
                    "noisy",
                    "quiet",
                    "dusty",
                    "bright",
                    "dim",
                    "crooked",
                    "colorful",
                    "broken",
                    "distant",
                    "blurred",
                    "towering",
                    "scattered",
                    "flickering",
                    "painted",
                    "hanging",
                    "rusted",
                    "tilted",
                    "checkered",
                    "gleaming",
                    "peeling",
                    "huge",
                    "narrow",
                    "soaked",
                    "concrete",
                    "plastic",
                    "flashing",
                    "leaning",
                    "overflowing",
                    "chipped",
                    "reflective",
                    "cracked",
                ],
                &[
                    "puddles",
                    "graffiti",
                    "neon",
                    "reflections",
                    "pedestrians",
                    "umbrellas",
                    "billboards",
                    "streetlights",
                    "cobblestones",
                    "pigeons",
                    "scaffolding",
                    "banners",
                    "lanterns",
                    "shadows",
                    "steam",
                    "flags",
                    "posters",
                    "cyclists",
                    "signs",
                    "wires",
                    "awnings",
                    "crowds",
                    "hydrants",
                    "benches",
                    "kiosks",
                    "balconies",
                    "fences",
                    "cranes",
                    "chimneys",
                    "mailboxes",
                    "hedges",
                    "manholes",
                    "bollards",
                    "trashcans",
                    "storefronts",
                    "antennas",
                ],
            ],
        }
        .with_repeated_details(),
        Domain {
            name: "wildlife",
            template: "{0} {1} {2} across {3}, {5} {6}, {7} {8}, {9} {10}, {11} {12}, {4}",
            slots: vec![
                &[
                    "fluffy", "sleepy", "playful", "spotted", "striped", "young", "wild", "curious", "grey", "brown",
                    "golden", "shaggy", "lean", "majestic", "scruffy", "speckled", "alert", "timid", "hungry",
                    "muscular",
                ],
                &[
                    "cat", "dog", "horse", "zebra", "giraffe", "elephant", "bear", "sheep", "cow", "heron", "fox",
                    "rabbit", "deer", "lion", "goat", "wolf",
                ],
                &[
                    "resting",
                    "grazing",
                    "running",
                    "drinking",
                    "sleeping",
                    "jumping",
                    "eating",
                    "standing",
                    "stretching",
                    "hunting",
                    "wading",
                    "yawning",
                ],
                &[
                    "meadow",
                    "riverbank",
                    "savanna",
                    "farmyard",
                    "hillside",
                    "lakeshore",
                    "grove",
                    "valley",
                    "prairie",
                    "woodland",
                    "marsh",
                    "tundra",
                    "canyon",
                    "glacier",
                    "pasture",
                    "orchard",
                    "jungle",
                    "wetland",
                    "steppe",
                    "clearing",
                ],
                &[
                    "wildlife",
                    "closeup",
                    "backlit",
                    "candid",
                    "overcast",
                    "silhouette",
                    "dawn",
                    "twilight",
                    "safari",
                    "naturalist",
                    "longlens",
                    "sunset",
                ],
                &[
                    "tall",
                    "dry",
                    "blooming",
                    "fallen",
                    "mossy",
                    "frozen",
                    "tangled",
                    "swaying",
                    "sparse",
                    "lush",
                    "thorny",
                    "boggy",
                    "rippling",
                    "jagged",
                    "gentle",
                    "pale",
                    "dense",
                    "hollow",
                    "sunlit",
                    "windswept",
                    "crumbling",
                    "silvery",
                    "twisted",
                    "rolling",
                    "damp",
                    "withered",
                    "shallow",
                    "feathery",
                    "grassy",
                    "rocky",
                    "sandy",
                    "leafy",
                    "snowy",
                    "dewy",
                    "tawny",
                    "bristly",
                ],
                &[
                    "grass",
                    "reeds",
                    "wildflowers",
                    "branches",
                    "boulders",
                    "ferns",
                    "pines",
                    "clouds",
                    "birds",
                    "insects",
                    "tracks",
                    "mist",
                    "sunbeams",
                    "logs",
                    "pebbles",
                    "thistles",
                    "vines",
                    "cattails",
                    "mountains",
                    "stumps",
                    "acorns",
                    "feathers",
                    "cliffs",
                    "streams",
                    "burrows",
                    "shrubs",
                    "lichen",
                    "roots",
                    "hay",
                    "fog",
                    "moss",
                    "willows",
                    "antlers",
                    "nests",
                    "dragonflies",
                    "bushes",
                ],
            ],
        }
        .with_repeated_details(),
        Domain {
            name: "kitchen",
            template: "{0} {1} {2} on {3}, {5} {6}, {7} {8}, {9} {10}, {11} {12}, {4}",
            slots: vec![
                &[
                    "fresh", "sliced", "grilled", "homemade", "steaming", "crispy", "sweet", "spicy", "frosted",
                    "roasted", "glazed", "baked", "fried", "stuffed", "vegan", "gourmet", "leftover", "savory",
                    "layered", "tiny",
                ],
                &[
                    "pizza",
                    "sandwich",
                    "salad",
                    "cake",
                    "soup",
                    "pasta",
                    "donut",
                    "broccoli",
                    "banana",
                    "hotdog",
                    "omelette",
                    "burrito",
                    "pancake",
                    "sushi",
                    "taco",
                    "croissant",
                ],
                &[
                    "served",
                    "arranged",
                    "displayed",
                    "sitting",
                    "stacked",
                    "plated",
                    "drizzled",
                    "garnished",
                    "wrapped",
                    "halved",
                    "toppled",
                    "skewered",
                ],
                &[
                    "countertop",
                    "tabletop",
                    "tray",
                    "platter",
                    "skillet",
                    "saucer",
                    "lunchbox",
                    "bento",
                    "picnic",
                    "buffet",
                    "windowsill",
                    "bistro",
                    "diner",
                    "cafeteria",
                    "stovetop",
                    "placemat",
                    "tablecloth",
                    "bakery",
                    "canteen",
                    "breadboard",
                ],
                &[
                    "overhead",
                    "macro",
                    "flatlay",
                    "menu",
                    "editorial",
                    "flash",
                    "moody",
                    "airy",
                    "rustic",
                    "styled",
                    "glossy",
                    "magazine",
                ],
                &[
                    "chopped",
                    "scattered",
                    "melted",
                    "toasted",
                    "pickled",
                    "creamy",
                    "fragrant",
                    "shredded",
                    "candied",
                    "tangy",
                    "buttery",
                    "smoky",
                    "zesty",
                    "diced",
                    "whipped",
                    "charred",
                    "salty",
                    "tender",
                    "sugary",
                    "flaky",
                    "juicy",
                    "minced",
                    "sour",
                    "warm",
                    "chilled",
                    "rich",
                    "sticky",
                    "bitter",
                    "crunchy",
                    "powdered",
                    "caramelized",
                    "sauteed",
                    "poached",
                    "seasoned",
                    "peppery",
                    "velvety",
                ],
                &[
                    "herbs",
                    "tomatoes",
                    "cheese",
                    "olives",
                    "peppers",
                    "onions",
                    "nuts",
                    "berries",
                    "lemons",
                    "crumbs",
                    "sauce",
                    "sprinkles",
                    "mushrooms",
                    "spinach",
                    "chilies",
                    "napkins",
                    "forks",
                    "glasses",
                    "garlic",
                    "basil",
                    "walnuts",
                    "seeds",
                    "croutons",
                    "syrup",
                    "honey",
                    "radishes",
                    "carrots",
                    "avocado",
                    "noodles",
                    "cucumbers",
                    "spoons",
                    "parsley",
                    "sesame",
                    "cinnamon",
                    "raisins",
                    "chives",
                ],
            ],
        }
        .with_repeated_details(),
    ]
}

/// Domains absent from the corpus; prompts drawn from them model requests
/// for subject matter the cache has not seen yet.
pub fn novel_domains() -> Vec<Domain> {
    vec![
        Domain {
            name: "interior",
            template: "{0} {1} {2} inside {3}, {5} {6}, {7} {8}, {9} {10}, {11} {12}, {4}",
            slots: vec![
                &[
                    "cozy",
                    "minimalist",
                    "ornate",
                    "cluttered",
                    "sunny",
                    "gloomy",
                    "elegant",
                    "abandoned",
                    "industrial",
                    "baroque",
                    "spacious",
                    "cramped",
                    "vaulted",
                    "victorian",
                    "scandinavian",
                    "bohemian",
                    "opulent",
                    "shabby",
                    "airy",
                    "dim",
                ],
                &[
                    "armchair",
                    "bookshelf",
                    "piano",
                    "fireplace",
                    "staircase",
                    "bathtub",
                    "chandelier",
                    "wardrobe",
                    "desk",
                    "bed",
                    "sofa",
                    "mirror",
                    "loom",
                    "harp",
                    "bench",
                    "clock",
                ],
                &[
                    "lit",
                    "facing",
                    "tucked",
                    "centered",
                    "framed",
                    "mirrored",
                    "shadowed",
                    "reflected",
                    "curtained",
                    "draped",
                    "overlooking",
                    "flanked",
                ],
                &[
                    "attic",
                    "library",
                    "lobby",
                    "bedroom",
                    "loft",
                    "studio",
                    "greenhouse",
                    "cathedral",
                    "office",
                    "observatory",
                    "cellar",
                    "parlor",
                    "conservatory",
                    "ballroom",
                    "chapel",
                    "corridor",
                    "nursery",
                    "pantry",
                    "mezzanine",
                    "foyer",
                ],
                &[
                    "render",
                    "blueprint",
                    "illustration",
                    "watercolor",
                    "oil",
                    "sketch",
                    "still",
                    "lithograph",
                    "etching",
                    "gouache",
                    "pastel",
                    "engraving",
                ],
                &[
                    "velvet",
                    "brass",
                    "woven",
                    "lacquered",
                    "embroidered",
                    "gilded",
                    "teak",
                    "linen",
                    "porcelain",
                    "copper",
                    "tasseled",
                    "wicker",
                    "crystal",
                    "enamel",
                    "walnut",
                    "ivory",
                    "mahogany",
                    "quilted",
                    "carved",
                    "beaded",
                    "tufted",
                    "frosted",
                    "marbled",
                    "pewter",
                    "rattan",
                    "ceramic",
                    "silken",
                    "antique",
                    "patterned",
                    "leaded",
                    "inlaid",
                    "stained",
                    "upholstered",
                    "fringed",
                    "varnished",
                    "scalloped",
                ],
                &[
                    "cushions",
                    "curtains",
                    "rugs",
                    "lamps",
                    "paintings",
                    "vases",
                    "books",
                    "candles",
                    "clocks",
                    "tiles",
                    "beams",
                    "shutters",
                    "tapestries",
                    "drawers",
                    "sconces",
                    "pillows",
                    "blankets",
                    "frames",
                    "shelves",
                    "railings",
                    "rafters",
                    "doorways",
                    "banisters",
                    "chests",
                    "trunks",
                    "globes",
                    "figurines",
                    "baskets",
                    "pots",
                    "mantels",
                    "cabinets",
                    "stools",
                    "ottomans",
                    "easels",
                    "candelabras",
                    "dressers",
                ],
            ],
        }
        .with_repeated_details(),
        Domain {
            name: "space",
            template: "{0} {1} {2} beyond {3}, {5} {6}, {7} {8}, {9} {10}, {11} {12}, {4}",
            slots: vec![
                &[
                    "ancient",
                    "derelict",
                    "massive",
                    "spiral",
                    "icy",
                    "burning",
                    "ringed",
                    "crimson",
                    "violet",
                    "cobalt",
                    "colossal",
                    "rogue",
                    "abandoned",
                    "gleaming",
                    "dark",
                    "twin",
                    "shattered",
                    "nameless",
                    "orbital",
                    "alien",
                ],
                &[
                    "nebula",
                    "planet",
                    "spaceship",
                    "asteroid",
                    "comet",
                    "galaxy",
                    "moon",
                    "satellite",
                    "starship",
                    "wormhole",
                    "pulsar",
                    "quasar",
                    "rover",
                    "probe",
                    "shuttle",
                    "outpost",
                ],
                &[
                    "orbiting",
                    "drifting",
                    "colliding",
                    "exploding",
                    "hovering",
                    "rotating",
                    "launching",
                    "docking",
                    "eclipsing",
                    "spinning",
                    "descending",
                    "ascending",
                ],
                &[
                    "jupiter",
                    "saturn",
                    "neptune",
                    "mars",
                    "venus",
                    "mercury",
                    "pluto",
                    "andromeda",
                    "orion",
                    "sirius",
                    "vega",
                    "titan",
                    "europa",
                    "io",
                    "ganymede",
                    "callisto",
                    "triton",
                    "ceres",
                    "eris",
                    "kepler",
                ],
                &[
                    "concept",
                    "airbrush",
                    "synthwave",
                    "vaporwave",
                    "retrofuturist",
                    "pulp",
                    "hyperreal",
                    "scifi",
                    "holographic",
                    "spacescape",
                    "astrophoto",
                    "lowpoly",
                ],
                &[
                    "cosmic",
                    "luminous",
                    "radiant",
                    "swirling",
                    "metallic",
                    "faint",
                    "toxic",
                    "silent",
                    "molten",
                    "pale",
                    "stellar",
                    "gaseous",
                    "charged",
                    "ionized",
                    "dusty",
                    "magnetic",
                    "glittering",
                    "infrared",
                    "ultraviolet",
                    "spectral",
                    "flaring",
                    "pulsing",
                    "gravitational",
                    "celestial",
                    "interstellar",
                    "solar",
                    "lunar",
                    "galactic",
                    "nuclear",
                    "polar",
                    "atomic",
                    "barren",
                    "volcanic",
                    "cratered",
                    "irradiated",
                ],
                &[
                    "debris",
                    "auroras",
                    "stars",
                    "beacons",
                    "antennas",
                    "crystals",
                    "plasma",
                    "vapor",
                    "rings",
                    "shards",
                    "sparks",
                    "storms",
                    "meteors",
                    "craters",
                    "lights",
                    "nebulae",
                    "jets",
                    "flares",
                    "tails",
                    "panels",
                    "thrusters",
                    "hatches",
                    "domes",
                    "lasers",
                    "clouds",
                    "geysers",
                    "ridges",
                    "canyons",
                    "moons",
                    "quasars",
                    "filaments",
                    "particles",
                    "waves",
                    "fields",
                    "horizons",
                    "eclipses",
                ],
            ],
        }
        .with_repeated_details(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub corpus_size: usize,
    pub requests: usize,
    /// Mean arrivals per second.
    pub rate: f64,
    /// Relative frequency of each domain, in `reference_domains` order.
    pub domain_weights: Vec<f64>,
    /// Weights of verbatim, edited, fresh and novel-topic prompts.
    pub kind_weights: [f64; 4],
    /// Weight of redrawing 1, 2, … slots of an edited prompt.
    pub edit_weights: Vec<f64>,
    /// Probability that a prompt asks for priority quality.
    pub quality_rate: f64,
    pub users: usize,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            corpus_size: 5000,
            requests: 5000,
            rate: 1.0,
            domain_weights: vec![0.45, 0.35, 0.2],
            kind_weights: [0.15, 0.38, 0.32, 0.15],
            edit_weights: vec![1.0; 13],
            quality_rate: 0.0,
            users: 50,
            seed: 2024,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &str, msg: &str| Err(Error::config(field, msg));
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return cfg("workload.rate", "must be > 0");
        }
        if self.domain_weights.len() != reference_domains().len() {
            return cfg("workload.domain_weights", "needs one weight per domain");
        }
        for (field, ws) in [
            ("workload.domain_weights", &self.domain_weights[..]),
            ("workload.kind_weights", &self.kind_weights[..]),
            ("workload.edit_weights", &self.edit_weights[..]),
        ] {
            if ws.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || ws.iter().sum::<f64>() <= 0.0 {
                return cfg(field, "weights must be >= 0 with a positive sum");
            }
        }
        if !(0.0..=1.0).contains(&self.quality_rate) {
            return cfg("workload.quality_rate", "must lie in [0, 1]");
        }
        if self.users == 0 {
            return cfg("workload.users", "must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub corpus: Vec<CorpusRecord>,
    pub trace: Vec<TraceRequest>,
}

struct Caption {
    domain: usize,
    picks: Vec<usize>,
}

/// Generates the corpus and trace deterministically from `config.seed`.
pub fn generate(config: &WorkloadConfig) -> Result<Workload> {
    config.validate()?;
    let domains = reference_domains();
    let novel = novel_domains();
    let all: Vec<&Domain> = domains.iter().chain(&novel).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pick_domain = WeightedIndex::new(&config.domain_weights).map_err(|e| Error::Config(e.to_string()))?;
    let pick_kind = WeightedIndex::new(config.kind_weights).map_err(|e| Error::Config(e.to_string()))?;
    let pick_edits = WeightedIndex::new(&config.edit_weights).map_err(|e| Error::Config(e.to_string()))?;
    let gaps = Exp::new(config.rate).map_err(|e| Error::Config(e.to_string()))?;

    let captions: Vec<Caption> = (0..config.corpus_size)
        .map(|_| {
            let domain = pick_domain.sample(&mut rng);
            Caption {
                domain,
                picks: domains[domain].draw(&mut rng),
            }
        })
        .collect();
    let corpus = captions
        .iter()
        .enumerate()
        .map(|(i, c)| CorpusRecord {
            caption: domains[c.domain].render(&c.picks),
            payload_uri: format!("corpus/{i:06}.img"),
        })
        .collect();

    let mut t = 0.0;
    let mut trace = Vec::with_capacity(config.requests);
    for id in 0..config.requests {
        t += gaps.sample(&mut rng);
        let kind = match pick_kind.sample(&mut rng) {
            0 | 1 if captions.is_empty() => 2,
            k => k,
        };
        let (domain, picks) = match kind {
            0 | 1 => {
                let base = captions.choose(&mut rng).expect("nonempty");
                let mut picks = base.picks.clone();
                if kind == 1 {
                    let d = &domains[base.domain];
                    let slots: Vec<usize> = (0..d.slots.len()).collect();
                    let n = (pick_edits.sample(&mut rng) + 1).min(slots.len());
                    for &slot in slots.choose_multiple(&mut rng, n) {
                        picks[slot] = rng.random_range(0..d.slots[slot].len());
                    }
                }
                (base.domain, picks)
            }
            2 => {
                let domain = pick_domain.sample(&mut rng);
                (domain, domains[domain].draw(&mut rng))
            }
            _ => {
                let domain = domains.len() + rng.random_range(0..novel.len());
                (domain, all[domain].draw(&mut rng))
            }
        };
        trace.push(TraceRequest {
            id: id as u64,
            arrival: t,
            prompt: all[domain].render(&picks),
            user: format!("user-{:03}", rng.random_range(0..config.users)),
            quality: rng.random_bool(config.quality_rate),
        });
    }
    Ok(Workload { corpus, trace })
}
