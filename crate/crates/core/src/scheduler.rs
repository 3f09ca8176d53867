//! Semantic request routing.
//!
//! Each node is summarized by the mean of the vectors it stores. A prompt
//! goes to the node whose summary has the highest cosine with the prompt
//! embedding, unless the prompt history says it is a repeat: near-exact
//! repeats reuse the earlier result outright, close repeats are sent to the
//! fastest GPU for a fresh full-quality generation.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_norm, Embedding, ZERO_NORM};
use crate::error::{Error, Result};
use crate::node::{fastest_node, NodeId, NodeProfile};
use crate::store::{EntryId, Shard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    /// Mean over image and text vectors together.
    #[default]
    Joint,
    ImageOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRepresentation {
    pub node_id: NodeId,
    pub repr_vec: Vec<f64>,
}

impl NodeRepresentation {
    pub fn is_degenerate(&self) -> bool {
        l2_norm(&self.repr_vec) < ZERO_NORM
    }
}

/// Node summary from the shard's running sums.
pub fn node_representation(shard: &Shard, mode: RepresentationMode) -> Result<NodeRepresentation> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    let n = shard.len() as f64;
    let (img, txt) = shard.running_sums();
    let repr_vec = match mode {
        RepresentationMode::Joint => img.iter().zip(txt).map(|(a, b)| (a + b) / (2.0 * n)).collect(),
        RepresentationMode::ImageOnly => img.iter().map(|a| a / n).collect(),
    };
    Ok(NodeRepresentation {
        node_id: shard.node_id().clone(),
        repr_vec,
    })
}

/// Node summary summed afresh from every stored vector.
pub fn recompute_representation(shard: &Shard, mode: RepresentationMode) -> Result<NodeRepresentation> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    let mut acc = vec![0.0; shard.dim()];
    let mut count = 0.0;
    for e in shard.iter() {
        let vecs: &[&Embedding] = match mode {
            RepresentationMode::Joint => &[&e.image_vec, &e.text_vec],
            RepresentationMode::ImageOnly => &[&e.image_vec],
        };
        for v in vecs {
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += x;
            }
            count += 1.0;
        }
    }
    Ok(NodeRepresentation {
        node_id: shard.node_id().clone(),
        repr_vec: acc.into_iter().map(|x| x / count).collect(),
    })
}

/// Cosine between a prompt vector and a node representation. Neither side
/// needs to be normalized.
pub fn s_match(prompt: &[f64], repr: &NodeRepresentation) -> Result<f64> {
    if prompt.len() != repr.repr_vec.len() {
        return Err(Error::DimensionMismatch {
            expected: repr.repr_vec.len(),
            got: prompt.len(),
        });
    }
    let rn = l2_norm(&repr.repr_vec);
    if rn < ZERO_NORM {
        return Err(Error::DegenerateRepresentation);
    }
    let pn = l2_norm(prompt);
    if pn < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(dot(prompt, &repr.repr_vec) / (pn * rn))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleReason {
    SemanticMatch,
    QualityPriority,
    HistoryReuse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    pub node_id: NodeId,
    pub reason: ScheduleReason,
    /// S_match for semantic routing; the history cosine otherwise.
    pub match_score: f64,
    /// Earlier result to hand back, for `HistoryReuse`.
    pub reuse: Option<EntryId>,
}

/// Routes to the node with the highest S_match, ties to the smallest node
/// id. Degenerate representations are skipped.
pub fn select_node(prompt: &[f64], reps: &[NodeRepresentation]) -> Result<ScheduleDecision> {
    let mut best: Option<(&NodeRepresentation, f64)> = None;
    for rep in reps {
        let score = match s_match(prompt, rep) {
            Ok(s) => s,
            Err(Error::DegenerateRepresentation) => continue,
            Err(e) => return Err(e),
        };
        let better = match best {
            None => true,
            Some((b, bs)) => score > bs || (score == bs && rep.node_id < b.node_id),
        };
        if better {
            best = Some((rep, score));
        }
    }
    let (rep, score) = best.ok_or(Error::NoNodesAvailable)?;
    Ok(ScheduleDecision {
        node_id: rep.node_id.clone(),
        reason: ScheduleReason::SemanticMatch,
        match_score: score,
        reuse: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryItem {
    pub embedding: Embedding,
    pub result_id: EntryId,
    pub node_id: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryConfig {
    pub capacity: usize,
    /// Cosine at or above which an earlier result is reused directly.
    pub reuse_threshold: f64,
    /// Cosine at or above which a prompt counts as a repeat.
    pub repeat_threshold: f64,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        HistoryConfig {
            capacity: 256,
            reuse_threshold: 0.99,
            repeat_threshold: 0.95,
        }
    }
}

impl HistoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("scheduler.capacity", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.repeat_threshold) || !(0.0..=1.0).contains(&self.reuse_threshold) {
            return Err(Error::config("scheduler", "thresholds must lie in [0, 1]"));
        }
        if self.repeat_threshold > self.reuse_threshold {
            return Err(Error::config(
                "scheduler.repeat_threshold",
                "must not exceed scheduler.reuse_threshold",
            ));
        }
        Ok(())
    }
}

/// Bounded ring of recently served prompts.
#[derive(Debug, Clone)]
pub struct PromptHistory {
    config: HistoryConfig,
    items: VecDeque<HistoryItem>,
}

impl PromptHistory {
    pub fn new(config: HistoryConfig) -> Self {
        PromptHistory {
            config,
            items: VecDeque::with_capacity(config.capacity),
        }
    }

    pub fn config(&self) -> &HistoryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn record(&mut self, embedding: Embedding, result_id: EntryId, node_id: NodeId) {
        if self.items.len() == self.config.capacity {
            self.items.pop_front();
        }
        self.items.push_back(HistoryItem {
            embedding,
            result_id,
            node_id,
        });
    }

    /// Drops items whose result has been evicted.
    pub fn forget(&mut self, evicted: &BTreeSet<EntryId>) {
        self.items.retain(|item| !evicted.contains(&item.result_id));
    }

    /// Most similar item, preferring the most recent on ties.
    pub fn best_match(&self, prompt: &[f64]) -> Option<(&HistoryItem, f64)> {
        let mut best: Option<(&HistoryItem, f64)> = None;
        for item in self.items.iter().rev() {
            if item.embedding.dim() != prompt.len() {
                continue;
            }
            let c = dot(prompt, item.embedding.values());
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((item, c));
            }
        }
        best
    }
}

/// Repeat detection ahead of semantic routing.
///
/// Returns `HistoryReuse` when the closest earlier prompt reaches the reuse
/// threshold, `QualityPriority` on the fastest node when it only reaches the
/// repeat threshold, and `None` otherwise.
pub fn check_history(prompt: &Embedding, history: &PromptHistory, nodes: &[NodeProfile]) -> Option<ScheduleDecision> {
    let (item, score) = history.best_match(prompt.values())?;
    let cfg = history.config();
    if score >= cfg.reuse_threshold {
        return Some(ScheduleDecision {
            node_id: item.node_id.clone(),
            reason: ScheduleReason::HistoryReuse,
            match_score: score,
            reuse: Some(item.result_id),
        });
    }
    if score >= cfg.repeat_threshold {
        let node = fastest_node(nodes)?;
        return Some(ScheduleDecision {
            node_id: node.node_id.clone(),
            reason: ScheduleReason::QualityPriority,
            match_score: score,
            reuse: None,
        });
    }
    None
}
