//! Retrieval-driven dispatch: pick a reference image, choose between direct
//! return, image-to-image and text-to-image, run the generation, and account
//! for its latency.
//!
//! The candidate set is the union of the top-k image-vector and text-vector
//! matches for the prompt. Every candidate gets a composite score
//! `S = (clip_like + pick_like) / 2`; the best candidate (ties to the smaller
//! id) decides the branch:
//!
//! | best score        | branch                        |
//! |-------------------|-------------------------------|
//! | `S > hi`          | return the cached image       |
//! | `lo <= S <= hi`   | image-to-image from reference |
//! | `S < lo` or none  | text-to-image from noise      |
//!
//! Latency follows
//!
//! ```text
//! L = t_retrieve + x·t_return + y·(t_noise + K·t_step) + z·N·t_step
//! ```
//!
//! where exactly one of `x`, `y`, `z` is 1.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{dot, hex_digest, l2_normalize, EmbedderBackend, Embedding, HashEmbedder, Modality};
use crate::error::{Error, Result};
use crate::payload::PayloadStore;
use crate::store::{CacheEntry, EntryId, Shard};

/// Default retrieval fan-out per modality.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hi: f64,
    pub lo: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { hi: 0.5, lo: 0.4 }
    }
}

impl Thresholds {
    pub fn new(hi: f64, lo: f64) -> Result<Self> {
        let t = Thresholds { hi, lo };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::config(
                "thresholds",
                format!("need 0 <= lo < hi <= 1, got lo={} hi={}", self.lo, self.hi),
            ));
        }
        Ok(())
    }

    pub fn classify(&self, score: f64) -> DispatchMode {
        if score > self.hi {
            DispatchMode::ReturnCached
        } else if score >= self.lo {
            DispatchMode::ImageToImage
        } else {
            DispatchMode::TextToImage
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    ReturnCached,
    ImageToImage,
    TextToImage,
}

impl DispatchMode {
    pub const ALL: [DispatchMode; 3] = [
        DispatchMode::ReturnCached,
        DispatchMode::ImageToImage,
        DispatchMode::TextToImage,
    ];

    /// The `(x, y, z)` indicator triple.
    pub fn flags(self) -> (u8, u8, u8) {
        match self {
            DispatchMode::ReturnCached => (1, 0, 0),
            DispatchMode::ImageToImage => (0, 1, 0),
            DispatchMode::TextToImage => (0, 0, 1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DispatchMode::ReturnCached => "return_cached",
            DispatchMode::ImageToImage => "image_to_image",
            DispatchMode::TextToImage => "text_to_image",
        }
    }
}

impl fmt::Display for DispatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchDecision {
    pub mode: DispatchMode,
    /// Present for `ReturnCached` and `ImageToImage`.
    pub reference_id: Option<EntryId>,
    /// Composite score of the best candidate; `None` when nothing was retrieved.
    pub best_score: Option<f64>,
}

impl DispatchDecision {
    pub fn text_to_image(best_score: Option<f64>) -> Self {
        DispatchDecision {
            mode: DispatchMode::TextToImage,
            reference_id: None,
            best_score,
        }
    }
}

/// A prompt with its text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    pub clip_like: f64,
    pub pick_like: f64,
}

/// Prompt-to-image relevance scoring.
pub trait ScorerBackend: Send + Sync {
    fn score(&self, prompt: &Prompt, entry: &CacheEntry) -> ScorePair;
}

/// Reference scorer: cosine of the prompt with the entry's image vector and
/// with its text vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineScorer;

impl ScorerBackend for CosineScorer {
    fn score(&self, prompt: &Prompt, entry: &CacheEntry) -> ScorePair {
        let p = prompt.embedding.values();
        ScorePair {
            clip_like: dot(p, entry.image_vec.values()),
            pick_like: dot(p, entry.text_vec.values()),
        }
    }
}

/// Sum of the two relevance components, halved onto the cosine scale.
pub fn composite_score(prompt: &Prompt, entry: &CacheEntry, scorer: &dyn ScorerBackend) -> f64 {
    let pair = scorer.score(prompt, entry);
    (pair.clip_like + pair.pick_like) * 0.5
}

/// Scores every retrieved candidate and picks the branch.
pub fn decide(
    prompt: &Prompt,
    shard: &Shard,
    k: usize,
    thresholds: &Thresholds,
    scorer: &dyn ScorerBackend,
) -> Result<DispatchDecision> {
    let candidates = shard.dual_retrieve(&prompt.embedding, k)?;
    let mut best: Option<(EntryId, f64)> = None;
    // Ascending ids, strict comparison: ties stay with the smaller id.
    for id in candidates {
        let entry = shard.get(id).ok_or(Error::NotFound(id))?;
        let s = composite_score(prompt, entry, scorer);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    let Some((id, score)) = best else {
        return Ok(DispatchDecision::text_to_image(None));
    };
    Ok(match thresholds.classify(score) {
        DispatchMode::TextToImage => DispatchDecision::text_to_image(Some(score)),
        mode => DispatchDecision {
            mode,
            reference_id: Some(id),
            best_score: Some(score),
        },
    })
}

/// Denoising step counts: `img2img` (K) and `txt2img` (N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub img2img: u32,
    pub txt2img: u32,
}

impl Default for StepCounts {
    fn default() -> Self {
        StepCounts {
            img2img: 20,
            txt2img: 50,
        }
    }
}

impl StepCounts {
    pub fn validate(&self) -> Result<()> {
        if self.img2img >= self.txt2img {
            return Err(Error::config(
                "steps.img2img",
                format!("K={} must be below N={}", self.img2img, self.txt2img),
            ));
        }
        Ok(())
    }
}

/// Per-node inputs of the latency model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    pub t_retrieve: f64,
    pub t_return: f64,
    pub t_noise: f64,
    pub t_step: f64,
    pub img2img_steps: u32,
    pub txt2img_steps: u32,
}

impl LatencyParams {
    /// GPU-occupied seconds: the generation terms only.
    pub fn gpu_seconds(&self, mode: DispatchMode) -> f64 {
        let (_, y, z) = mode.flags();
        f64::from(y) * (self.t_noise + f64::from(self.img2img_steps) * self.t_step)
            + f64::from(z) * f64::from(self.txt2img_steps) * self.t_step
    }
}

/// Per-request latency in seconds.
pub fn request_latency(mode: DispatchMode, p: &LatencyParams) -> f64 {
    let (x, y, z) = mode.flags();
    let (x, y, z) = (f64::from(x), f64::from(y), f64::from(z));
    p.t_retrieve
        + x * p.t_return
        + y * (p.t_noise + f64::from(p.img2img_steps) * p.t_step)
        + z * f64::from(p.txt2img_steps) * p.t_step
}

/// Output of a generation backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub payload: PayloadData,
    pub image_vec: Embedding,
    pub steps_executed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadData {
    /// Image bytes the caller must store.
    Bytes(Vec<u8>),
    /// Already written to shared storage at this URI.
    Stored(String),
}

pub trait GeneratorBackend: Send + Sync {
    fn text_to_image(&self, prompt: &Prompt, steps: u32) -> Result<Generated>;

    fn image_to_image(&self, prompt: &Prompt, reference: &CacheEntry, steps: u32) -> Result<Generated>;

    /// Real backends report measured wall-clock latency instead of the model.
    fn measures_wall_clock(&self) -> bool {
        false
    }
}

/// Deterministic stand-in for a diffusion model.
///
/// Payloads are small text blobs carrying a digest of (prompt, reference,
/// seed). The image embedding of a text-to-image result is the embedder's
/// image embedding of the prompt; an image-to-image result is pulled toward
/// its reference, weighting the reference by `(N − K) / N`.
#[derive(Debug, Clone)]
pub struct SimulatedGenerator {
    pub embedder: HashEmbedder,
    pub seed: u64,
    pub steps: StepCounts,
}

impl SimulatedGenerator {
    pub fn new(embedder: HashEmbedder, seed: u64, steps: StepCounts) -> Self {
        SimulatedGenerator { embedder, seed, steps }
    }

    fn payload(&self, kind: &str, prompt: &str, reference: Option<&str>, steps: u32) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(prompt.as_bytes());
        h.update([0]);
        h.update(reference.unwrap_or("").as_bytes());
        let digest = hex_digest(&h.finalize());
        format!(
            "simulated-image\nkind: {kind}\nsteps: {steps}\nreference: {}\ndigest: {digest}\n",
            reference.unwrap_or("-")
        )
        .into_bytes()
    }
}

impl GeneratorBackend for SimulatedGenerator {
    fn text_to_image(&self, prompt: &Prompt, steps: u32) -> Result<Generated> {
        Ok(Generated {
            payload: PayloadData::Bytes(self.payload("txt2img", &prompt.text, None, steps)),
            image_vec: self.embedder.embed_image(prompt.text.as_bytes())?,
            steps_executed: steps,
        })
    }

    fn image_to_image(&self, prompt: &Prompt, reference: &CacheEntry, steps: u32) -> Result<Generated> {
        let fresh = self.embedder.embed_image(prompt.text.as_bytes())?;
        let n = f64::from(self.steps.txt2img);
        let keep = (n - f64::from(steps)).max(0.0) / n;
        let raw: Vec<f64> = fresh
            .values()
            .iter()
            .zip(reference.image_vec.values())
            .map(|(f, r)| (1.0 - keep) * f + keep * r)
            .collect();
        Ok(Generated {
            payload: PayloadData::Bytes(self.payload("img2img", &prompt.text, Some(&reference.payload_uri), steps)),
            image_vec: l2_normalize(&raw, Modality::Image)?,
            steps_executed: steps,
        })
    }
}

/// Everything `execute` needs besides the decision and the shard.
pub struct ExecContext<'a> {
    pub generator: &'a dyn GeneratorBackend,
    pub payloads: &'a mut dyn PayloadStore,
    pub params: LatencyParams,
    /// Logical time stamped on touched or inserted entries.
    pub tick: u64,
    /// Id for a newly generated entry.
    pub new_id: EntryId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub mode: DispatchMode,
    pub payload_uri: String,
    pub latency_s: f64,
    pub gpu_seconds: f64,
    /// Entry created for a generated image.
    pub inserted: Option<EntryId>,
    /// Entry that served as the returned image or the reference.
    pub reference_id: Option<EntryId>,
    pub steps_executed: u32,
}

pub fn generated_uri(id: EntryId) -> String {
    format!("generated/{id:012}.img")
}

/// Runs a decision against the serving shard.
///
/// Direct returns and image-to-image references count as accesses of the
/// reference entry. Generated images are written to the payload store and
/// inserted into the shard with the prompt's text embedding.
pub fn execute(
    decision: &DispatchDecision,
    prompt: &Prompt,
    shard: &mut Shard,
    ctx: ExecContext<'_>,
) -> Result<Execution> {
    let started = Instant::now();
    let backend_err = |context: String| {
        move |e: Error| Error::Backend {
            context,
            message: e.to_string(),
        }
    };
    let reference = match decision.reference_id {
        Some(id) => Some(shard.get(id).ok_or(Error::NotFound(id))?.clone()),
        None => None,
    };
    if decision.mode != DispatchMode::TextToImage && reference.is_none() {
        return Err(Error::InvalidParameter(format!(
            "{} decision without a reference entry",
            decision.mode
        )));
    }
    let generated = match decision.mode {
        DispatchMode::ReturnCached => None,
        DispatchMode::ImageToImage => {
            let r = reference.as_ref().expect("checked above");
            let k = ctx.params.img2img_steps;
            Some(
                ctx.generator
                    .image_to_image(prompt, r, k)
                    .map_err(backend_err(format!("image_to_image from entry {}", r.id)))?,
            )
        }
        DispatchMode::TextToImage => Some(
            ctx.generator
                .text_to_image(prompt, ctx.params.txt2img_steps)
                .map_err(backend_err("text_to_image".into()))?,
        ),
    };

    if let Some(r) = &reference {
        shard.touch(r.id, ctx.tick)?;
    }

    let (payload_uri, inserted, steps_executed) = match generated {
        None => (reference.as_ref().expect("checked above").payload_uri.clone(), None, 0),
        Some(g) => {
            let uri = match g.payload {
                PayloadData::Bytes(bytes) => {
                    let uri = generated_uri(ctx.new_id);
                    ctx.payloads.put(&uri, &bytes)?;
                    uri
                }
                PayloadData::Stored(uri) => uri,
            };
            let entry = CacheEntry::new(
                ctx.new_id,
                prompt.text.clone(),
                uri.clone(),
                g.image_vec,
                prompt.embedding.clone().retag(Modality::Text),
                ctx.tick,
            );
            shard.insert(entry)?;
            (uri, Some(ctx.new_id), g.steps_executed)
        }
    };

    let latency_s = if ctx.generator.measures_wall_clock() {
        started.elapsed().as_secs_f64() + ctx.params.t_retrieve
    } else {
        request_latency(decision.mode, &ctx.params)
    };
    Ok(Execution {
        mode: decision.mode,
        payload_uri,
        latency_s,
        gpu_seconds: ctx.params.gpu_seconds(decision.mode),
        inserted,
        reference_id: decision.reference_id,
        steps_executed,
    })
}

/// Request body for a remote model server's `POST /txt2img`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Txt2ImgRequest {
    pub prompt: String,
    pub steps: u32,
    pub seed: u64,
}

/// Request body for a remote model server's `POST /img2img`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Img2ImgRequest {
    pub prompt: String,
    pub reference_uri: String,
    pub strength_steps: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub payload_uri: String,
}
