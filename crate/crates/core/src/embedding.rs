//! Embedding vectors, similarity math and the deterministic mock embedder.
//!
//! Every vector that enters a store or a query is unit-norm, so a dot
//! product is a cosine similarity. [`HashEmbedder`] stands in for a neural
//! text/image encoder: it is a bag-of-tokens hash, so prompts that share
//! tokens land near each other and identical prompts land on the same point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default embedding width.
pub const DEFAULT_DIM: usize = 512;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Allowed deviation from unit norm for vectors loaded from outside.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

/// A unit-norm feature vector tagged with the modality it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    modality: Modality,
}

impl Embedding {
    /// Wraps a vector that is already unit-norm (within [`UNIT_NORM_TOLERANCE`]).
    pub fn from_unit(values: Vec<f64>, modality: Modality) -> Result<Self> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "expected a unit vector, norm is {norm}"
            )));
        }
        Ok(Embedding { values, modality })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Same vector, different modality tag.
    pub fn retag(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Eight independent lanes let the compiler vectorize; the summation order
    // is fixed, so results stay reproducible.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f64], modality: Modality) -> Result<Embedding> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    let norm = l2_norm(v);
    if norm < ZERO_NORM || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(Embedding {
        values: v.iter().map(|x| x / norm).collect(),
        modality,
    })
}

/// Cosine of two unit vectors, i.e. their dot product.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot(&a.values, &b.values))
}

/// Splits on whitespace, lowercases, and trims surrounding punctuation.
/// Tokens that are pure punctuation are dropped.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

fn token_rng(token: &str, seed: u64, salt: &[u8]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(salt);
    hasher.update(token.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Bag-of-tokens hash embedding.
///
/// Each token expands into `dim` pseudo-random ±1 components keyed by
/// `(seed, token)`; the token vectors are summed and normalized. Two strings
/// that share tokens therefore have a positive expected cosine, proportional
/// to the overlap.
pub fn hash_embed(text: &str, modality: Modality, seed: u64, dim: usize) -> Result<Embedding> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut acc = vec![0.0; dim];
    let mut any = false;
    for token in tokens(text) {
        any = true;
        let mut rng = token_rng(&token, seed, b"tok");
        for slot in acc.iter_mut() {
            *slot += if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    if !any {
        return Err(Error::EmptyInput);
    }
    // A bag whose token vectors cancel exactly is astronomically unlikely but
    // would surface as ZeroVector here.
    l2_normalize(&acc, modality)
}

pub(crate) fn gaussian_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = l2_norm(&v);
        if n > ZERO_NORM {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws `k` unit centroids and `n_per_cluster` samples around each,
/// `normalize(centroid + spread * u)` with `u` a random unit direction.
/// Returns samples with their generating cluster label, grouped by label.
pub fn synth_clustered_embeddings(
    k: usize,
    n_per_cluster: usize,
    spread: f64,
    seed: u64,
    dim: usize,
) -> Result<Vec<(Embedding, usize)>> {
    if k == 0 || n_per_cluster == 0 || dim == 0 {
        return Err(Error::InvalidParameter("k, n_per_cluster and dim must be >= 1".into()));
    }
    if !(spread > 0.0 && spread < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "spread must lie in (0, 1), got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = separated_directions(&mut rng, k, dim);
    let mut out = Vec::with_capacity(k * n_per_cluster);
    for (label, c) in centroids.iter().enumerate() {
        for _ in 0..n_per_cluster {
            let u = gaussian_unit(&mut rng, dim);
            let raw: Vec<f64> = c.iter().zip(&u).map(|(a, b)| a + spread * b).collect();
            out.push((l2_normalize(&raw, Modality::Image)?, label));
        }
    }
    Ok(out)
}

/// `k` random unit directions, redrawn (a bounded number of times) until no
/// pair has cosine above 0.5.
pub(crate) fn separated_directions(rng: &mut impl Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while dirs.len() < k {
        let mut best = gaussian_unit(rng, dim);
        let mut best_worst = worst_cosine(&dirs, &best);
        for _ in 0..64 {
            if best_worst <= 0.5 {
                break;
            }
            let cand = gaussian_unit(rng, dim);
            let w = worst_cosine(&dirs, &cand);
            if w < best_worst {
                best = cand;
                best_worst = w;
            }
        }
        dirs.push(best);
    }
    dirs
}

fn worst_cosine(dirs: &[Vec<f64>], cand: &[f64]) -> f64 {
    dirs.iter().map(|d| dot(d, cand)).fold(f64::NEG_INFINITY, f64::max)
}

/// Produces embeddings for prompts and image payloads.
pub trait EmbedderBackend: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<Embedding>;

    /// Embeds image content. Stand-in payloads are UTF-8 descriptions.
    fn embed_image(&self, content: &[u8]) -> Result<Embedding>;
}

/// Offline embedder built on [`hash_embed`].
///
/// Image embeddings hash the content as text and then add a small
/// content-keyed offset of norm `image_gap`, so an image and its caption are
/// close but not identical, mirroring the gap between modalities in a real
/// joint embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub image_gap: f64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: DEFAULT_DIM,
            seed: 7,
            image_gap: 0.5,
        }
    }
}

impl EmbedderBackend for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        hash_embed(text, Modality::Text, self.seed, self.dim)
    }

    fn embed_image(&self, content: &[u8]) -> Result<Embedding> {
        let text = String::from_utf8_lossy(content);
        let base = hash_embed(&text, Modality::Image, self.seed, self.dim)?;
        if self.image_gap == 0.0 {
            return Ok(base);
        }
        let mut hasher = Sha256::new();
        hasher.update(content);
        let digest = hex_digest(&hasher.finalize());
        let mut rng = token_rng(&digest, self.seed, b"img");
        let offset = gaussian_unit(&mut rng, self.dim);
        let raw: Vec<f64> = base
            .values()
            .iter()
            .zip(&offset)
            .map(|(b, o)| b + self.image_gap * o)
            .collect();
        l2_normalize(&raw, Modality::Image)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Request body for an external embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    /// Prompt text, or base64 image bytes.
    pub data: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Image,
}

impl From<EmbedKind> for Modality {
    fn from(kind: EmbedKind) -> Self {
        match kind {
            EmbedKind::Text => Modality::Text,
            EmbedKind::Image => Modality::Image,
        }
    }
}

/// Response body of an external embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

impl EmbedResponse {
    /// Checks the width and normalizes; services are not trusted to return
    /// unit vectors.
    pub fn into_embedding(self, modality: Modality, dim: usize) -> Result<Embedding> {
        if self.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.vector.len(),
            });
        }
        l2_normalize(&self.vector, modality)
    }
}
