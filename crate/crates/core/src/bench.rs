//! Clustered-drift eviction benchmark.
//!
//! Three semantic clusters each hold several narrow subtopics. Every cycle
//! inserts a batch of entries, some on-topic and some outliers, runs one
//! maintenance pass with a global budget, then replays queries whose subtopic
//! popularity shifts from cycle to cycle. A query hits when dispatch reuses a
//! cached entry (return or refinement). Misses are not inserted, so the cache
//! contents are shaped by inserts and eviction alone.
//!
//! ```
//! use edgecache::bench::{run_drift_bench, DriftBenchConfig};
//! use edgecache::maintenance::EvictionPolicy;
//!
//! let cfg = DriftBenchConfig { inserts_per_cycle: 120, queries_per_cycle: 60, ..DriftBenchConfig::default() };
//! let result = run_drift_bench(&cfg, EvictionPolicy::Lcu).unwrap();
//! assert_eq!(result.cycles.len(), cfg.cycles);
//! assert!(result.cycles.iter().all(|c| c.cache_size <= cfg.c_max()));
//! ```

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{decide, CosineScorer, DispatchMode, Prompt, Thresholds, DEFAULT_TOP_K};
use crate::embedding::{gaussian_unit, l2_norm, l2_normalize, separated_directions, Embedding, Modality};
use crate::error::{Error, Result};
use crate::maintenance::{evict, total_size, EvictionPolicy};
use crate::node::{NodeId, NodeProfile};
use crate::scheduler::{node_representation, select_node, RepresentationMode};
use crate::store::{CacheEntry, EntryId, Shard};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftBenchConfig {
    pub dim: usize,
    /// One cluster per node of the reference cluster.
    pub clusters: usize,
    pub subtopics: usize,
    pub cycles: usize,
    pub inserts_per_cycle: usize,
    pub queries_per_cycle: usize,
    /// Share of each insert batch drawn away from every cluster.
    pub outlier_fraction: f64,
    /// Global budget as a fraction of one insert batch.
    pub budget_fraction: f64,
    /// Offset of subtopic centres from their cluster centre.
    pub subtopic_spread: f64,
    /// Offset of entries and queries from their subtopic centre.
    pub item_noise: f64,
    /// Offset of an entry's image vector from its text vector.
    pub image_gap: f64,
    /// Share of a cycle's queries aimed at that cycle's hot subtopic.
    pub hot_share: f64,
    pub seed: u64,
}

impl Default for DriftBenchConfig {
    fn default() -> Self {
        DriftBenchConfig {
            dim: 128,
            clusters: 3,
            subtopics: 5,
            cycles: 5,
            inserts_per_cycle: 1000,
            queries_per_cycle: 600,
            outlier_fraction: 0.45,
            budget_fraction: 0.6,
            subtopic_spread: 1.0,
            item_noise: 1.6,
            image_gap: 0.3,
            hot_share: 0.7,
            seed: 5,
        }
    }
}

impl DriftBenchConfig {
    pub fn c_max(&self) -> usize {
        (self.budget_fraction * self.inserts_per_cycle as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bench.dim", self.dim),
            ("bench.clusters", self.clusters),
            ("bench.subtopics", self.subtopics),
            ("bench.cycles", self.cycles),
            ("bench.inserts_per_cycle", self.inserts_per_cycle),
            ("bench.queries_per_cycle", self.queries_per_cycle),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        for (field, v) in [
            ("bench.outlier_fraction", self.outlier_fraction),
            ("bench.hot_share", self.hot_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction.is_finite()) || self.c_max() == 0 {
            return Err(Error::config(
                "bench.budget_fraction",
                "must give a budget of at least one entry",
            ));
        }
        for (field, v) in [
            ("bench.subtopic_spread", self.subtopic_spread),
            ("bench.item_noise", self.item_noise),
            ("bench.image_gap", self.image_gap),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    /// 1-based cycle number.
    pub cycle: usize,
    pub queries: usize,
    pub hits: usize,
    pub hit_rate: f64,
    /// Entries cached after this cycle's maintenance.
    pub cache_size: usize,
    pub evicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub policy: EvictionPolicy,
    pub cycles: Vec<CycleStats>,
}

impl BenchResult {
    pub fn final_hit_rate(&self) -> f64 {
        self.cycles.last().map_or(0.0, |c| c.hit_rate)
    }
}

/// Fixed geometry shared by every policy so they see identical traffic.
struct Topics {
    /// `centres[cluster][subtopic]`.
    centres: Vec<Vec<Vec<f64>>>,
}

impl Topics {
    fn new(cfg: &DriftBenchConfig, rng: &mut impl Rng) -> Self {
        let clusters = separated_directions(rng, cfg.clusters, cfg.dim);
        let centres = clusters
            .iter()
            .map(|c| {
                (0..cfg.subtopics)
                    .map(|_| offset(c, cfg.subtopic_spread, rng))
                    .collect()
            })
            .collect();
        Topics { centres }
    }
}

/// `normalize(base + scale * u)` for a random unit `u`.
fn offset(base: &[f64], scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let u = gaussian_unit(rng, base.len());
    let raw: Vec<f64> = base.iter().zip(&u).map(|(b, x)| b + scale * x).collect();
    let n = l2_norm(&raw);
    raw.into_iter().map(|x| x / n).collect()
}

enum Insert {
    Topical { cluster: usize, text: Vec<f64> },
    Outlier { text: Vec<f64> },
}

struct Cycle {
    inserts: Vec<Insert>,
    queries: Vec<Vec<f64>>,
}

fn draw_cycles(cfg: &DriftBenchConfig, topics: &Topics, rng: &mut impl Rng) -> Vec<Cycle> {
    (0..cfg.cycles)
        .map(|c| {
            let inserts = (0..cfg.inserts_per_cycle)
                .map(|_| {
                    if rng.random_bool(cfg.outlier_fraction) {
                        Insert::Outlier {
                            text: gaussian_unit(rng, cfg.dim),
                        }
                    } else {
                        let cluster = rng.random_range(0..cfg.clusters);
                        let sub = rng.random_range(0..cfg.subtopics);
                        Insert::Topical {
                            cluster,
                            text: offset(&topics.centres[cluster][sub], cfg.item_noise, rng),
                        }
                    }
                })
                .collect();
            let hot = c % cfg.subtopics;
            let queries = (0..cfg.queries_per_cycle)
                .map(|_| {
                    let cluster = rng.random_range(0..cfg.clusters);
                    let sub = if rng.random_bool(cfg.hot_share) {
                        hot
                    } else {
                        rng.random_range(0..cfg.subtopics)
                    };
                    offset(&topics.centres[cluster][sub], cfg.item_noise, rng)
                })
                .collect();
            Cycle { inserts, queries }
        })
        .collect()
}

/// Runs the benchmark for one policy.
pub fn run_drift_bench(cfg: &DriftBenchConfig, policy: EvictionPolicy) -> Result<BenchResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics = Topics::new(cfg, &mut rng);
    let cycles = draw_cycles(cfg, &topics, &mut rng);
    replay(cfg, policy, &cycles, &mut rng)
}

/// Runs the benchmark for every policy over the same traffic.
pub fn run_all(cfg: &DriftBenchConfig) -> Result<Vec<BenchResult>> {
    EvictionPolicy::ALL.iter().map(|&p| run_drift_bench(cfg, p)).collect()
}

fn replay(cfg: &DriftBenchConfig, policy: EvictionPolicy, cycles: &[Cycle], rng: &mut impl Rng) -> Result<BenchResult> {
    let nodes: Vec<NodeProfile> = NodeProfile::reference_cluster()
        .into_iter()
        .take(cfg.clusters)
        .collect();
    let node_ids: Vec<NodeId> = (0..cfg.clusters)
        .map(|i| {
            nodes
                .get(i)
                .map_or_else(|| NodeId::new(format!("node-{i}")), |n| n.node_id.clone())
        })
        .collect();
    let mut shards: BTreeMap<NodeId, Shard> = node_ids
        .iter()
        .map(|id| (id.clone(), Shard::new(id.clone(), cfg.dim, 1)))
        .collect();
    let thresholds = Thresholds::default();
    let mut tick = 0u64;
    let mut next_id: EntryId = 0;
    let mut out = Vec::with_capacity(cycles.len());

    for (c, cycle) in cycles.iter().enumerate() {
        for ins in &cycle.inserts {
            tick += 1;
            let (node, text) = match ins {
                Insert::Topical { cluster, text } => (node_ids[*cluster].clone(), text),
                Insert::Outlier { text } => (route(text, &shards, &node_ids)?, text),
            };
            let text_vec = Embedding::from_unit(text.clone(), Modality::Text)?;
            let image_vec = l2_normalize(&offset(text, cfg.image_gap, rng), Modality::Image)?;
            let entry = CacheEntry::new(
                next_id,
                format!("item {next_id}"),
                format!("bench/{next_id:08}.img"),
                image_vec,
                text_vec,
                tick,
            );
            shards
                .get_mut(&node)
                .ok_or_else(|| Error::UnknownNode(node.clone()))?
                .insert(entry)?;
            next_id += 1;
        }

        let evicted = evict(&mut shards, cfg.c_max(), policy)?.len();

        let mut hits = 0;
        for q in &cycle.queries {
            tick += 1;
            let node = route(q, &shards, &node_ids)?;
            let shard = shards.get_mut(&node).ok_or_else(|| Error::UnknownNode(node.clone()))?;
            let prompt = Prompt {
                text: String::new(),
                embedding: Embedding::from_unit(q.clone(), Modality::Text)?,
            };
            let decision = decide(&prompt, shard, DEFAULT_TOP_K, &thresholds, &CosineScorer)?;
            if decision.mode != DispatchMode::TextToImage {
                hits += 1;
                if let Some(id) = decision.reference_id {
                    shard.touch(id, tick)?;
                }
            }
        }
        out.push(CycleStats {
            cycle: c + 1,
            queries: cycle.queries.len(),
            hits,
            hit_rate: hits as f64 / cycle.queries.len() as f64,
            cache_size: total_size(&shards),
            evicted,
        });
    }
    Ok(BenchResult { policy, cycles: out })
}

/// Routes by semantic match over non-empty shards; with none, the first node.
fn route(v: &[f64], shards: &BTreeMap<NodeId, Shard>, node_ids: &[NodeId]) -> Result<NodeId> {
    let mut reps = Vec::with_capacity(shards.len());
    for shard in shards.values().filter(|s| !s.is_empty()) {
        reps.push(node_representation(shard, RepresentationMode::Joint)?);
    }
    match select_node(v, &reps) {
        Ok(d) => Ok(d.node_id),
        Err(Error::NoNodesAvailable) => Ok(node_ids[0].clone()),
        Err(e) => Err(e),
    }
}

/// `(cycle, policy, hit_rate)` rows for every policy and cycle.
pub fn hitrate_rows(results: &[BenchResult]) -> Vec<(u64, String, f64)> {
    results
        .iter()
        .flat_map(|r| {
            r.cycles
                .iter()
                .map(move |c| (c.cycle as u64, r.policy.to_string(), c.hit_rate))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DriftBenchConfig {
        DriftBenchConfig {
            inserts_per_cycle: 200,
            queries_per_cycle: 100,
            ..DriftBenchConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small();
        assert_eq!(
            run_drift_bench(&cfg, EvictionPolicy::Lru).unwrap(),
            run_drift_bench(&cfg, EvictionPolicy::Lru).unwrap()
        );
    }

    #[test]
    fn budget_holds_after_every_cycle() {
        let cfg = small();
        for r in run_all(&cfg).unwrap() {
            for c in &r.cycles {
                assert!(c.cache_size <= cfg.c_max());
                assert!(c.hits <= c.queries);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DriftBenchConfig {
            outlier_fraction: 1.5,
            ..DriftBenchConfig::default()
        };
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("bench.outlier_fraction"));
        let cfg = DriftBenchConfig {
            budget_fraction: 0.0,
            ..DriftBenchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
