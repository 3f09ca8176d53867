//! Corpus partitioning across edge nodes by K-means over image embeddings.
//!
//! Lloyd iteration minimizes the within-cluster sum of squared errors
//!
//! ```text
//! J = Σ_i Σ_{x ∈ C_i} ||x − μ_i||²
//! ```
//!
//! with one cluster per edge node. Seeding is farthest-point: a seeded
//! random first centroid, then repeatedly the sample farthest from every
//! centroid chosen so far.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::node::{NodeId, NodeProfile};
use crate::store::{CacheEntry, EntryId, Shard};

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    /// Number of centroid updates performed.
    pub iterations: usize,
    /// Objective after each centroid update, in order.
    pub history: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluates J for the given centroids and assignments.
pub fn objective(samples: &[&[f64]], centroids: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    if samples.len() != assignments.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples but {} assignments",
            samples.len(),
            assignments.len()
        )));
    }
    let mut j = 0.0;
    for (x, &a) in samples.iter().zip(assignments) {
        let mu = centroids.get(a).ok_or(Error::IndexOutOfRange {
            index: a,
            len: centroids.len(),
        })?;
        j += sq_dist(x, mu);
    }
    Ok(j)
}

/// K-means over embeddings. See [`kmeans_raw`].
pub fn kmeans(samples: &[Embedding], k: usize, max_iter: usize, seed: u64) -> Result<ClusteringResult> {
    let raw: Vec<&[f64]> = samples.iter().map(|e| e.values()).collect();
    kmeans_raw(&raw, k, max_iter, seed)
}

/// Lloyd's algorithm from farthest-point seeding.
///
/// Stops when an assignment pass changes nothing or after `max_iter`
/// centroid updates. A cluster that empties is reseeded with the sample
/// farthest from its own centroid (taken from a cluster of two or more),
/// which never increases J.
pub fn kmeans_raw(samples: &[&[f64]], k: usize, max_iter: usize, seed: u64) -> Result<ClusteringResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if samples.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            got: samples.len(),
        });
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let mut centroids = farthest_point_seeds(samples, k, seed);
    let mut assignments = vec![usize::MAX; samples.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let changed = assign(samples, &centroids, &mut assignments);
        if !changed || iterations >= max_iter {
            break;
        }
        update_centroids(samples, &mut centroids, &mut assignments, dim);
        iterations += 1;
        history.push(objective(samples, &centroids, &assignments)?);
    }

    let objective = objective(samples, &centroids, &assignments)?;
    Ok(ClusteringResult {
        centroids,
        assignments,
        objective,
        iterations,
        history,
    })
}

fn farthest_point_seeds(samples: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..samples.len());
    let mut centroids = vec![samples[first].to_vec()];
    let mut nearest: Vec<f64> = samples.iter().map(|s| sq_dist(s, samples[first])).collect();
    while centroids.len() < k {
        // Ties resolve to the smallest index.
        let (idx, _) = nearest.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &d)| if d > best.1 { (i, d) } else { best },
        );
        centroids.push(samples[idx].to_vec());
        for (n, s) in nearest.iter_mut().zip(samples) {
            *n = n.min(sq_dist(s, samples[idx]));
        }
    }
    centroids
}

/// Nearest-centroid assignment, ties to the lower cluster index. Returns
/// whether any assignment changed.
fn assign(samples: &[&[f64]], centroids: &[Vec<f64>], assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (x, slot) in samples.iter().zip(assignments.iter_mut()) {
        let mut best = (0, f64::INFINITY);
        for (c, mu) in centroids.iter().enumerate() {
            let d = sq_dist(x, mu);
            if d < best.1 {
                best = (c, d);
            }
        }
        if *slot != best.0 {
            *slot = best.0;
            changed = true;
        }
    }
    changed
}

fn means(samples: &[&[f64]], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in samples.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x.iter()) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, counts)
}

fn update_centroids(samples: &[&[f64]], centroids: &mut [Vec<f64>], assignments: &mut [usize], dim: usize) {
    let k = centroids.len();
    let (mut new, mut counts) = means(samples, assignments, k, dim);
    while let Some(empty) = counts.iter().position(|&n| n == 0) {
        let donor = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] >= 2)
            .map(|(i, x)| (i, sq_dist(x, &new[assignments[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((idx, _)) = donor else { break };
        assignments[idx] = empty;
        let (m, c) = means(samples, assignments, k, dim);
        new = m;
        counts = c;
    }
    for (c, (mu, n)) in centroids.iter_mut().zip(new.into_iter().zip(&counts)) {
        if *n > 0 {
            *c = mu;
        }
    }
}

/// Result of splitting a corpus across nodes.
#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: BTreeMap<NodeId, Shard>,
    pub centroids: BTreeMap<NodeId, Vec<f64>>,
    pub clustering: ClusteringResult,
}

impl Partition {
    /// `{"node_id": [entry ids…]}` with ids ascending.
    pub fn manifest(&self) -> BTreeMap<NodeId, Vec<EntryId>> {
        self.shards
            .iter()
            .map(|(id, s)| (id.clone(), s.ids().collect()))
            .collect()
    }

    /// Writes `manifest.json`, `centroids.json` and one `shard-<node>.jsonl`
    /// per node into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&self.manifest())?)?;
        fs::write(dir.join("centroids.json"), serde_json::to_vec(&self.centroids)?)?;
        for (id, shard) in &self.shards {
            shard.save(dir.join(shard_file_name(id)))?;
        }
        Ok(())
    }
}

pub fn shard_file_name(node: &NodeId) -> String {
    format!("shard-{node}.jsonl")
}

/// Loads shards written by [`Partition::save`] for the given nodes. Nodes
/// without a shard file get an empty shard.
pub fn load_shards(dir: impl AsRef<Path>, nodes: &[NodeProfile], dim: usize) -> Result<BTreeMap<NodeId, Shard>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for node in nodes {
        let path = dir.join(shard_file_name(&node.node_id));
        let shard = if path.exists() {
            Shard::load(node.node_id.clone(), dim, node.capacity_hint, path)?
        } else {
            Shard::new(node.node_id.clone(), dim, node.capacity_hint)
        };
        out.insert(node.node_id.clone(), shard);
    }
    Ok(out)
}

/// Clusters the corpus image vectors with one cluster per node and fills
/// each node's shard with one cluster.
///
/// Clusters are matched to nodes greedily: largest cluster to the node with
/// the largest `capacity_hint` (ties by node id), and so on down.
pub fn partition_dataset(
    corpus: Vec<CacheEntry>,
    nodes: &[NodeProfile],
    max_iter: usize,
    seed: u64,
) -> Result<Partition> {
    if nodes.is_empty() {
        return Err(Error::NoNodesAvailable);
    }
    if corpus.len() < nodes.len() {
        return Err(Error::TooFewSamples {
            needed: nodes.len(),
            got: corpus.len(),
        });
    }
    let dim = corpus[0].image_vec.dim();
    let raw: Vec<&[f64]> = corpus.iter().map(|e| e.image_vec.values()).collect();
    let clustering = kmeans_raw(&raw, nodes.len(), max_iter, seed)?;

    let sizes = clustering.cluster_sizes();
    let mut cluster_order: Vec<usize> = (0..nodes.len()).collect();
    cluster_order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut node_order: Vec<&NodeProfile> = nodes.iter().collect();
    node_order.sort_by(|a, b| {
        b.capacity_hint
            .cmp(&a.capacity_hint)
            .then_with(|| a.node_id.cmp(&b.node_id))
    });
    let mut node_of_cluster = vec![0usize; nodes.len()];
    for (c, n) in cluster_order.iter().zip(0..) {
        node_of_cluster[*c] = n;
    }

    let mut shards: BTreeMap<NodeId, Shard> = node_order
        .iter()
        .map(|n| (n.node_id.clone(), Shard::new(n.node_id.clone(), dim, n.capacity_hint)))
        .collect();
    let centroids = cluster_order
        .iter()
        .zip(&node_order)
        .map(|(&c, n)| (n.node_id.clone(), clustering.centroids[c].clone()))
        .collect();
    for (entry, &cluster) in corpus.into_iter().zip(&clustering.assignments) {
        let node = &node_order[node_of_cluster[cluster]].node_id;
        shards.get_mut(node).expect("node present").insert(entry)?;
    }
    Ok(Partition {
        shards,
        centroids,
        clustering,
    })
}
