//! Edge node identity and per-node timing and pricing constants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dispatch::{LatencyParams, StepCounts};
use crate::error::{Error, Result};

/// Seconds per denoising step on the reference (RTX 4090 D class) GPU.
///
/// Fifty steps at this rate take 2.24 s, the measured Stable Diffusion mean.
pub const REFERENCE_T_STEP: f64 = 0.0448;
pub const DEFAULT_T_RETRIEVE: f64 = 0.10;
pub const DEFAULT_T_NOISE: f64 = 0.05;
pub const DEFAULT_T_RETURN: f64 = 0.03;

/// Hourly price of the vector database service ($0.12/h).
pub const VDB_HOURLY_COST: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

/// Timing and pricing constants of one edge node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: NodeId,
    pub gpu_class: String,
    /// Seconds per denoising step.
    pub t_step: f64,
    /// Seconds to noise a reference image before image-to-image denoising.
    pub t_noise: f64,
    /// Seconds to query the node's vector store.
    pub t_retrieve: f64,
    /// Seconds to hand a cached image back to the user.
    pub t_return: f64,
    /// GPU price in currency units per hour.
    pub hourly_cost: f64,
    /// Relative storage capacity, used to map large clusters onto large nodes.
    pub capacity_hint: usize,
}

impl NodeProfile {
    /// A node whose step time is `multiplier` times the reference GPU's.
    pub fn with_multiplier(
        node_id: impl Into<String>,
        gpu_class: impl Into<String>,
        multiplier: f64,
        hourly_cost: f64,
        capacity_hint: usize,
    ) -> Self {
        NodeProfile {
            node_id: NodeId::new(node_id),
            gpu_class: gpu_class.into(),
            t_step: REFERENCE_T_STEP * multiplier,
            t_noise: DEFAULT_T_NOISE,
            t_retrieve: DEFAULT_T_RETRIEVE,
            t_return: DEFAULT_T_RETURN,
            hourly_cost,
            capacity_hint,
        }
    }

    /// The three-worker heterogeneous cluster: RTX 4090 D, RTX 3090 and
    /// RTX 2070 class GPUs at $0.28, $0.23 and $0.084 per hour.
    pub fn reference_cluster() -> Vec<NodeProfile> {
        vec![
            NodeProfile::with_multiplier("edge-4090d", "RTX 4090 D", 1.0, 0.28, 3),
            NodeProfile::with_multiplier("edge-3090", "RTX 3090", 1.4, 0.23, 2),
            NodeProfile::with_multiplier("edge-2070", "RTX 2070", 2.6, 0.084, 1),
        ]
    }

    pub fn latency_params(&self, steps: StepCounts) -> LatencyParams {
        LatencyParams {
            t_retrieve: self.t_retrieve,
            t_return: self.t_return,
            t_noise: self.t_noise,
            t_step: self.t_step,
            img2img_steps: steps.img2img,
            txt2img_steps: steps.txt2img,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("nodes[{}].{name}", self.node_id);
        for (name, value) in [
            ("t_step", self.t_step),
            ("t_noise", self.t_noise),
            ("t_retrieve", self.t_retrieve),
            ("t_return", self.t_return),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::config(&field(name), "must be a finite time >= 0"));
            }
        }
        if !(self.hourly_cost >= 0.0 && self.hourly_cost.is_finite()) {
            return Err(Error::config(&field("hourly_cost"), "must be >= 0"));
        }
        if self.node_id.0.is_empty() {
            return Err(Error::config("nodes[].node_id", "must not be empty"));
        }
        Ok(())
    }
}

/// Picks the highest-performance node: smallest `t_step`, ties by node id.
pub fn fastest_node(profiles: &[NodeProfile]) -> Option<&NodeProfile> {
    profiles
        .iter()
        .min_by(|a, b| a.t_step.total_cmp(&b.t_step).then_with(|| a.node_id.cmp(&b.node_id)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cluster_prices_and_multipliers() {
        let nodes = NodeProfile::reference_cluster();
        let prices: Vec<f64> = nodes.iter().map(|n| n.hourly_cost).collect();
        assert_eq!(prices, vec![0.28, 0.23, 0.084]);
        assert_eq!(nodes[0].t_step, 0.0448);
        assert!((nodes[1].t_step - 0.0448 * 1.4).abs() < 1e-15);
        assert!((nodes[2].t_step - 0.0448 * 2.6).abs() < 1e-15);
    }

    #[test]
    fn fastest_node_prefers_small_step_then_id() {
        let mut nodes = NodeProfile::reference_cluster();
        assert_eq!(fastest_node(&nodes).unwrap().node_id.as_str(), "edge-4090d");
        nodes[1].t_step = nodes[0].t_step;
        nodes[1].node_id = NodeId::new("a-node");
        assert_eq!(fastest_node(&nodes).unwrap().node_id.as_str(), "a-node");
        assert!(fastest_node(&[]).is_none());
    }

    #[test]
    fn negative_time_rejected_with_field_name() {
        let mut node = NodeProfile::reference_cluster().remove(0);
        node.t_noise = -1.0;
        let msg = node.validate().unwrap_err().to_string();
        assert!(msg.contains("nodes[edge-4090d].t_noise"), "{msg}");
    }
}
