//! System configuration, loaded from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration for
//! the reference three-node cluster. Validation reports the offending field.
//!
//! ```
//! use edgecache::config::SystemConfig;
//!
//! let cfg = SystemConfig::from_toml_str(r#"
//!     seed = 11
//!     [thresholds]
//!     hi = 0.6
//!     lo = 0.45
//! "#).unwrap();
//! assert_eq!(cfg.nodes.len(), 3);
//! assert_eq!(cfg.thresholds.hi, 0.6);
//!
//! let err = SystemConfig::from_toml_str("[steps]\nimg2img = 60\ntxt2img = 50").unwrap_err();
//! assert!(err.to_string().contains("steps.img2img"));
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dispatch::{StepCounts, Thresholds, DEFAULT_TOP_K};
use crate::embedding::{HashEmbedder, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::maintenance::MaintenanceConfig;
use crate::node::{NodeProfile, VDB_HOURLY_COST};
use crate::optimizer::ContentTokenScorer;
use crate::scheduler::{HistoryConfig, RepresentationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Offline deterministic stand-in.
    #[default]
    Local,
    /// HTTP JSON service at `url`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub backend: BackendKind,
    pub url: Option<String>,
    pub seed: u64,
    pub image_gap: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        let h = HashEmbedder::default();
        EmbedderConfig {
            backend: BackendKind::Local,
            url: None,
            seed: h.seed,
            image_gap: h.image_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub backend: BackendKind,
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub enabled: bool,
    /// Replaces the built-in stop-word list.
    pub stopwords: Option<PathBuf>,
}

impl OptimizerConfig {
    pub fn scorer(&self) -> Result<ContentTokenScorer> {
        match &self.stopwords {
            Some(path) => ContentTokenScorer::from_file(path),
            None => Ok(ContentTokenScorer::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Retrieval fan-out per modality.
    pub top_k: usize,
    pub thresholds: Thresholds,
    pub steps: StepCounts,
    pub nodes: Vec<NodeProfile>,
    pub maintenance: MaintenanceConfig,
    pub scheduler: HistoryConfig,
    pub representation: RepresentationMode,
    pub optimizer: OptimizerConfig,
    pub embedder: EmbedderConfig,
    pub generator: GeneratorConfig,
    /// Vector database price per hour, billed over the simulated span.
    pub vdb_hourly_cost: f64,
    /// Lloyd iteration cap for partitioning.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            dim: DEFAULT_DIM,
            top_k: DEFAULT_TOP_K,
            thresholds: Thresholds::default(),
            steps: StepCounts::default(),
            nodes: NodeProfile::reference_cluster(),
            maintenance: MaintenanceConfig::default(),
            scheduler: HistoryConfig::default(),
            representation: RepresentationMode::default(),
            optimizer: OptimizerConfig::default(),
            embedder: EmbedderConfig::default(),
            generator: GeneratorConfig::default(),
            vdb_hourly_cost: VDB_HOURLY_COST,
            max_iter: crate::classifier::DEFAULT_MAX_ITER,
            seed: 42,
        }
    }
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SystemConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be >= 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be >= 1"));
        }
        self.thresholds.validate()?;
        self.steps.validate()?;
        if self.nodes.is_empty() {
            return Err(Error::config("nodes", "at least one node is required"));
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            node.validate()?;
            if !seen.insert(&node.node_id) {
                return Err(Error::config(
                    &format!("nodes[{}].node_id", node.node_id),
                    "duplicate node id",
                ));
            }
        }
        self.maintenance.validate(self.nodes.len())?;
        self.scheduler.validate()?;
        if !(self.vdb_hourly_cost >= 0.0 && self.vdb_hourly_cost.is_finite()) {
            return Err(Error::config("vdb_hourly_cost", "must be >= 0"));
        }
        if !(self.embedder.image_gap >= 0.0 && self.embedder.image_gap.is_finite()) {
            return Err(Error::config("embedder.image_gap", "must be >= 0"));
        }
        for (field, backend, url) in [
            ("embedder.url", self.embedder.backend, &self.embedder.url),
            ("generator.url", self.generator.backend, &self.generator.url),
        ] {
            if backend == BackendKind::Remote && url.as_deref().is_none_or(str::is_empty) {
                return Err(Error::config(field, "required when backend = \"remote\""));
            }
        }
        Ok(())
    }

    pub fn hash_embedder(&self) -> HashEmbedder {
        HashEmbedder {
            dim: self.dim,
            seed: self.embedder.seed,
            image_gap: self.embedder.image_gap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_of(text: &str) -> String {
        SystemConfig::from_toml_str(text).unwrap_err().to_string()
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(SystemConfig::from_toml_str("").unwrap(), SystemConfig::default());
    }

    #[test]
    fn round_trip() {
        let cfg = SystemConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(SystemConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn field_qualified_errors() {
        assert!(err_of("[thresholds]\nhi = 0.3\nlo = 0.4").contains("thresholds"));
        assert!(err_of("[steps]\nimg2img = 50\ntxt2img = 50").contains("steps.img2img"));
        assert!(err_of("nodes = []").contains("nodes"));
        assert!(err_of("dim = 0").contains("dim"));
        assert!(err_of("top_k = 0").contains("top_k"));
        assert!(err_of("[maintenance]\nc_max = 1\nperiod = 10\npolicy = \"lcu\"").contains("maintenance.c_max"));
        assert!(err_of("[maintenance]\nc_max = 10\nperiod = 0\npolicy = \"lru\"").contains("maintenance.period"));
        assert!(
            err_of("[scheduler]\ncapacity = 0\nreuse_threshold = 0.99\nrepeat_threshold = 0.95")
                .contains("scheduler.capacity")
        );
        assert!(err_of("[embedder]\nbackend = \"remote\"").contains("embedder.url"));
        assert!(err_of("[generator]\nbackend = \"remote\"").contains("generator.url"));
        assert!(err_of("bogus = 1").contains("bogus"));
        let dup = r#"
            [[nodes]]
            node_id = "a"
            gpu_class = "x"
            t_step = 0.1
            t_noise = 0.0
            t_retrieve = 0.0
            t_return = 0.0
            hourly_cost = 0.1
            capacity_hint = 1
            [[nodes]]
            node_id = "a"
            gpu_class = "x"
            t_step = -0.1
            t_noise = 0.0
            t_retrieve = 0.0
            t_return = 0.0
            hourly_cost = 0.1
            capacity_hint = 1
        "#;
        assert!(err_of(dup).contains("nodes[a].t_step"));
        assert!(err_of(&dup.replace("-0.1", "0.2")).contains("nodes[a].node_id"));
    }
}
