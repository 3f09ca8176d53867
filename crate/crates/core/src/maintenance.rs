//! Cache eviction over the federation of shards.
//!
//! The budget `c_max` is global: a run removes entries until the total
//! across every shard fits. LCU ranks all entries by Euclidean distance from
//! their own shard's centroid, with centroids computed once before anything
//! is removed, and evicts the farthest first (equal distances evict the
//! larger id). The LRU, LFU and FIFO baselines rank by `last_access`,
//! `hit_count` and `created_at`, oldest or smallest first, ties to the
//! smaller id.
//!
//! Eviction only reports what it removed. Deleting payloads is left to the
//! caller that owns storage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::l2_norm;
use crate::error::{Error, Result};
use crate::node::NodeId;
use crate::store::{CacheEntry, EntryId, Shard};

/// Default number of requests between maintenance runs.
pub const DEFAULT_PERIOD: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    Lcu,
    Lru,
    Lfu,
    Fifo,
}

impl EvictionPolicy {
    pub const ALL: [EvictionPolicy; 4] = [
        EvictionPolicy::Lcu,
        EvictionPolicy::Lru,
        EvictionPolicy::Lfu,
        EvictionPolicy::Fifo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvictionPolicy::Lcu => "lcu",
            EvictionPolicy::Lru => "lru",
            EvictionPolicy::Lfu => "lfu",
            EvictionPolicy::Fifo => "fifo",
        }
    }
}

impl fmt::Display for EvictionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvictionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lcu" => Ok(EvictionPolicy::Lcu),
            "lru" => Ok(EvictionPolicy::Lru),
            "lfu" => Ok(EvictionPolicy::Lfu),
            "fifo" => Ok(EvictionPolicy::Fifo),
            other => Err(Error::InvalidParameter(format!(
                "unknown eviction policy {other:?} (expected lcu, lru, lfu or fifo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceConfig {
    /// Entry budget summed over all shards.
    pub c_max: usize,
    /// Requests between runs.
    pub period: u64,
    pub policy: EvictionPolicy,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        MaintenanceConfig {
            c_max: 5000,
            period: DEFAULT_PERIOD,
            policy: EvictionPolicy::Lcu,
        }
    }
}

impl MaintenanceConfig {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        if self.period == 0 {
            return Err(Error::config("maintenance.period", "must be >= 1"));
        }
        if self.c_max < node_count {
            return Err(Error::config(
                "maintenance.c_max",
                format!("{} is below the node count {node_count}", self.c_max),
            ));
        }
        Ok(())
    }

    /// Whether a run is due after `request_counter` requests.
    pub fn is_due(&self, request_counter: u64) -> bool {
        request_counter > 0 && request_counter.is_multiple_of(self.period)
    }
}

/// One entry considered for eviction, with its ranking key.
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionCandidate {
    pub id: EntryId,
    pub node_id: NodeId,
    /// Distance from the shard centroid for LCU; the recency, frequency or
    /// insertion stamp for the baselines.
    pub d: f64,
}

/// An entry removed by a maintenance run.
#[derive(Debug, Clone, PartialEq)]
pub struct Evicted {
    pub node_id: NodeId,
    pub entry: CacheEntry,
}

pub fn total_size(shards: &BTreeMap<NodeId, Shard>) -> usize {
    shards.values().map(Shard::len).sum()
}

/// LCU candidates in eviction order, using centroids of the current shards.
pub fn lcu_candidates(shards: &BTreeMap<NodeId, Shard>) -> Result<Vec<EvictionCandidate>> {
    let mut out = Vec::new();
    for (node, shard) in shards {
        if shard.is_empty() {
            continue;
        }
        let mu = shard.centroid()?;
        for e in shard.iter() {
            let diff: Vec<f64> = e.image_vec.values().iter().zip(&mu).map(|(v, m)| v - m).collect();
            out.push(EvictionCandidate {
                id: e.id,
                node_id: node.clone(),
                d: l2_norm(&diff),
            });
        }
    }
    out.sort_by(|a, b| b.d.total_cmp(&a.d).then(b.id.cmp(&a.id)));
    Ok(out)
}

/// Baseline candidates in eviction order.
pub fn baseline_candidates(shards: &BTreeMap<NodeId, Shard>, policy: EvictionPolicy) -> Result<Vec<EvictionCandidate>> {
    let key: fn(&CacheEntry) -> u64 = match policy {
        EvictionPolicy::Lru => |e| e.last_access,
        EvictionPolicy::Lfu => |e| e.hit_count,
        EvictionPolicy::Fifo => |e| e.created_at,
        EvictionPolicy::Lcu => {
            return Err(Error::InvalidParameter("lcu is not a baseline policy".into()));
        }
    };
    let mut keyed: Vec<(u64, EvictionCandidate)> = shards
        .iter()
        .flat_map(|(node, shard)| {
            shard.iter().map(move |e| {
                (
                    key(e),
                    EvictionCandidate {
                        id: e.id,
                        node_id: node.clone(),
                        d: key(e) as f64,
                    },
                )
            })
        })
        .collect();
    keyed.sort_by(|(ka, a), (kb, b)| ka.cmp(kb).then(a.id.cmp(&b.id)));
    Ok(keyed.into_iter().map(|(_, c)| c).collect())
}

fn pop_until_within(
    shards: &mut BTreeMap<NodeId, Shard>,
    c_max: usize,
    ordered: Vec<EvictionCandidate>,
) -> Result<Vec<Evicted>> {
    let mut total = total_size(shards);
    let mut evicted = Vec::new();
    for cand in ordered {
        if total <= c_max {
            break;
        }
        let shard = shards
            .get_mut(&cand.node_id)
            .ok_or_else(|| Error::UnknownNode(cand.node_id.clone()))?;
        let entry = shard.remove(cand.id)?;
        evicted.push(Evicted {
            node_id: cand.node_id,
            entry,
        });
        total -= 1;
    }
    Ok(evicted)
}

/// Least-correlation eviction. Already within budget is a no-op.
pub fn lcu_evict(shards: &mut BTreeMap<NodeId, Shard>, c_max: usize) -> Result<Vec<Evicted>> {
    if total_size(shards) <= c_max {
        return Ok(Vec::new());
    }
    let ordered = lcu_candidates(shards)?;
    pop_until_within(shards, c_max, ordered)
}

/// LRU, LFU or FIFO eviction. Already within budget is a no-op.
pub fn baseline_evict(
    shards: &mut BTreeMap<NodeId, Shard>,
    c_max: usize,
    policy: EvictionPolicy,
) -> Result<Vec<Evicted>> {
    if total_size(shards) <= c_max {
        return Ok(Vec::new());
    }
    let ordered = baseline_candidates(shards, policy)?;
    pop_until_within(shards, c_max, ordered)
}

pub fn evict(shards: &mut BTreeMap<NodeId, Shard>, c_max: usize, policy: EvictionPolicy) -> Result<Vec<Evicted>> {
    match policy {
        EvictionPolicy::Lcu => lcu_evict(shards, c_max),
        baseline => baseline_evict(shards, c_max, baseline),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceReport {
    pub run: u64,
    pub policy: EvictionPolicy,
    pub evicted: Vec<Evicted>,
    /// Per-node sizes, ordered by node id.
    pub sizes_before: Vec<usize>,
    pub sizes_after: Vec<usize>,
    pub wall_time_s: f64,
}

/// Run-log line. Wall time is left out so logs replay byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceLogLine {
    pub run: u64,
    pub policy: EvictionPolicy,
    pub evicted: usize,
    pub sizes_before: Vec<usize>,
    pub sizes_after: Vec<usize>,
}

impl MaintenanceReport {
    pub fn evicted_ids(&self) -> std::collections::BTreeSet<EntryId> {
        self.evicted.iter().map(|e| e.entry.id).collect()
    }

    pub fn log_line(&self) -> MaintenanceLogLine {
        MaintenanceLogLine {
            run: self.run,
            policy: self.policy,
            evicted: self.evicted.len(),
            sizes_before: self.sizes_before.clone(),
            sizes_after: self.sizes_after.clone(),
        }
    }
}

/// Runs the configured policy once and reports what changed.
pub fn run_maintenance(
    shards: &mut BTreeMap<NodeId, Shard>,
    config: &MaintenanceConfig,
    run: u64,
) -> Result<MaintenanceReport> {
    let started = Instant::now();
    let sizes_before = shards.values().map(Shard::len).collect();
    let evicted = evict(shards, config.c_max, config.policy)?;
    Ok(MaintenanceReport {
        run,
        policy: config.policy,
        evicted,
        sizes_before,
        sizes_after: shards.values().map(Shard::len).collect(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs maintenance when `request_counter` is a multiple of the period.
pub fn maybe_run_maintenance(
    shards: &mut BTreeMap<NodeId, Shard>,
    config: &MaintenanceConfig,
    request_counter: u64,
) -> Result<Option<MaintenanceReport>> {
    if !config.is_due(request_counter) {
        return Ok(None);
    }
    run_maintenance(shards, config, request_counter / config.period).map(Some)
}
