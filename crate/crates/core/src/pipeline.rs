//! The request path shared by the simulator and the service.
//!
//! For every prompt: optional restructuring, text embedding, history check,
//! node selection, dispatch and execution on the chosen node, history
//! update, and maintenance when a period boundary is crossed.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::config::SystemConfig;
use crate::dispatch::{
    decide, execute, CosineScorer, DispatchDecision, DispatchMode, ExecContext, GeneratorBackend, Prompt,
    ScorerBackend, SimulatedGenerator,
};
use crate::embedding::EmbedderBackend;
use crate::error::{Error, Result};
use crate::maintenance::{run_maintenance, MaintenanceConfig, MaintenanceReport};
use crate::node::{fastest_node, NodeId, NodeProfile};
use crate::optimizer::{restructure, ImportanceScorer};
use crate::payload::{MemoryPayloadStore, PayloadStore};
use crate::scheduler::{
    check_history, node_representation, select_node, PromptHistory, ScheduleDecision, ScheduleReason,
};
use crate::store::{EntryId, Shard};

/// Pluggable backends of an [`Engine`].
pub struct Backends {
    pub embedder: Box<dyn EmbedderBackend>,
    pub generator: Box<dyn GeneratorBackend>,
    pub scorer: Box<dyn ScorerBackend>,
    pub payloads: Box<dyn PayloadStore>,
    /// Present when prompt restructuring is enabled.
    pub optimizer: Option<Box<dyn ImportanceScorer>>,
}

impl Backends {
    /// Hash embedder, simulated generator, cosine scorer and in-memory
    /// payloads, all derived from the configuration.
    pub fn local(config: &SystemConfig) -> Result<Self> {
        let embedder = config.hash_embedder();
        let optimizer: Option<Box<dyn ImportanceScorer>> = if config.optimizer.enabled {
            Some(Box::new(config.optimizer.scorer()?))
        } else {
            None
        };
        Ok(Backends {
            generator: Box::new(SimulatedGenerator::new(embedder.clone(), config.seed, config.steps)),
            embedder: Box::new(embedder),
            scorer: Box::new(CosineScorer),
            payloads: Box::new(MemoryPayloadStore::new()),
            optimizer,
        })
    }
}

/// What happened to one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestOutcome {
    /// 1-based position in the engine's request sequence.
    pub request_index: u64,
    /// Text after optional restructuring.
    pub prompt: String,
    pub node_id: NodeId,
    pub reason: ScheduleReason,
    /// S_match or history cosine; `None` when routing had nothing to compare.
    pub match_score: Option<f64>,
    pub mode: DispatchMode,
    /// Best composite score among retrieved candidates, or the history cosine
    /// for a reused result.
    pub score: Option<f64>,
    pub reference_id: Option<EntryId>,
    pub inserted: Option<EntryId>,
    pub payload_uri: String,
    pub latency_s: f64,
    pub gpu_seconds: f64,
    /// Maintenance runs completed before this request.
    pub cycle: u64,
}

pub struct Engine {
    config: SystemConfig,
    shards: BTreeMap<NodeId, Shard>,
    history: PromptHistory,
    backends: Backends,
    tick: u64,
    next_id: EntryId,
    requests: u64,
    maintenance_runs: u64,
}

impl Engine {
    /// Builds an engine over existing shards. Nodes without a shard start
    /// empty; a shard for a node not in the configuration is an error.
    pub fn new(config: SystemConfig, mut shards: BTreeMap<NodeId, Shard>, mut backends: Backends) -> Result<Self> {
        config.validate()?;
        if backends.embedder.dim() != config.dim {
            return Err(Error::config(
                "dim",
                format!("embedder produces {} dimensions", backends.embedder.dim()),
            ));
        }
        for id in shards.keys() {
            if !config.nodes.iter().any(|n| &n.node_id == id) {
                return Err(Error::UnknownNode(id.clone()));
            }
        }
        for node in &config.nodes {
            shards
                .entry(node.node_id.clone())
                .or_insert_with(|| Shard::new(node.node_id.clone(), config.dim, node.capacity_hint));
        }
        let mut last_id = None;
        for shard in shards.values() {
            if shard.dim() != config.dim {
                return Err(Error::DimensionMismatch {
                    expected: config.dim,
                    got: shard.dim(),
                });
            }
            crate::corpus::seed_payloads(shard.iter(), backends.payloads.as_mut())?;
            last_id = last_id.max(shard.ids().last());
        }
        let tick = shards
            .values()
            .flat_map(|s| s.iter().map(|e| e.last_access.max(e.created_at)))
            .max()
            .unwrap_or(0);
        Ok(Engine {
            history: PromptHistory::new(config.scheduler),
            config,
            shards,
            backends,
            tick,
            next_id: last_id.map_or(0, |id| id + 1),
            requests: 0,
            maintenance_runs: 0,
        })
    }

    pub fn local(config: SystemConfig, shards: BTreeMap<NodeId, Shard>) -> Result<Self> {
        let backends = Backends::local(&config)?;
        Engine::new(config, shards, backends)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn shards(&self) -> &BTreeMap<NodeId, Shard> {
        &self.shards
    }

    pub fn history(&self) -> &PromptHistory {
        &self.history
    }

    pub fn payloads(&self) -> &dyn PayloadStore {
        self.backends.payloads.as_ref()
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn maintenance_runs(&self) -> u64 {
        self.maintenance_runs
    }

    pub fn total_entries(&self) -> usize {
        self.shards.values().map(Shard::len).sum()
    }

    pub fn node(&self, id: &NodeId) -> Result<&NodeProfile> {
        self.config
            .nodes
            .iter()
            .find(|n| &n.node_id == id)
            .ok_or_else(|| Error::UnknownNode(id.clone()))
    }

    /// Serves one prompt. Maintenance runs after the request when the
    /// request count reaches a multiple of the configured period; its report
    /// is returned alongside.
    pub fn handle(&mut self, prompt: &str, quality: bool) -> Result<(RequestOutcome, Option<MaintenanceReport>)> {
        let text = match &self.backends.optimizer {
            Some(scorer) => restructure(prompt, scorer.as_ref())?,
            None => {
                let t = prompt.trim();
                if t.is_empty() {
                    return Err(Error::EmptyPrompt);
                }
                t.to_owned()
            }
        };
        let embedding = self
            .backends
            .embedder
            .embed_text(&text)
            .map_err(|e| Error::Embedder(e.to_string()))?;
        let prompt = Prompt { text, embedding };

        let schedule = self.schedule(&prompt, quality)?;
        let decision = match (&schedule.reason, schedule.reuse) {
            (ScheduleReason::HistoryReuse, Some(id)) => DispatchDecision {
                mode: DispatchMode::ReturnCached,
                reference_id: Some(id),
                best_score: Some(schedule.match_score),
            },
            (ScheduleReason::QualityPriority, _) => DispatchDecision::text_to_image(None),
            _ => {
                let shard = &self.shards[&schedule.node_id];
                decide(
                    &prompt,
                    shard,
                    self.config.top_k,
                    &self.config.thresholds,
                    self.backends.scorer.as_ref(),
                )?
            }
        };

        self.tick += 1;
        self.requests += 1;
        let params = self.node(&schedule.node_id)?.latency_params(self.config.steps);
        let shard = self
            .shards
            .get_mut(&schedule.node_id)
            .ok_or_else(|| Error::UnknownNode(schedule.node_id.clone()))?;
        let exec = execute(
            &decision,
            &prompt,
            shard,
            ExecContext {
                generator: self.backends.generator.as_ref(),
                payloads: self.backends.payloads.as_mut(),
                params,
                tick: self.tick,
                new_id: self.next_id,
            },
        )?;
        if exec.inserted.is_some() {
            self.next_id += 1;
        }
        let result_id = exec
            .inserted
            .or(exec.reference_id)
            .expect("every branch yields an entry");
        let match_score = schedule.match_score.is_finite().then_some(schedule.match_score);
        let outcome = RequestOutcome {
            request_index: self.requests,
            prompt: prompt.text.clone(),
            node_id: schedule.node_id.clone(),
            reason: schedule.reason,
            match_score,
            mode: exec.mode,
            score: decision.best_score,
            reference_id: exec.reference_id,
            inserted: exec.inserted,
            payload_uri: exec.payload_uri,
            latency_s: exec.latency_s,
            gpu_seconds: exec.gpu_seconds,
            cycle: self.maintenance_runs,
        };
        self.history.record(prompt.embedding, result_id, schedule.node_id);

        let report = if self.config.maintenance.is_due(self.requests) {
            Some(self.maintain()?)
        } else {
            None
        };
        Ok((outcome, report))
    }

    fn schedule(&self, prompt: &Prompt, quality: bool) -> Result<ScheduleDecision> {
        if let Some(mut hit) = check_history(&prompt.embedding, &self.history, &self.config.nodes) {
            if quality && hit.reason == ScheduleReason::HistoryReuse {
                let fastest = fastest_node(&self.config.nodes).ok_or(Error::NoNodesAvailable)?;
                hit = ScheduleDecision {
                    node_id: fastest.node_id.clone(),
                    reason: ScheduleReason::QualityPriority,
                    match_score: hit.match_score,
                    reuse: None,
                };
            }
            let still_cached = hit
                .reuse
                .is_none_or(|id| self.shards.get(&hit.node_id).is_some_and(|s| s.contains(id)));
            if still_cached {
                return Ok(hit);
            }
        }
        let mut reps = Vec::with_capacity(self.shards.len());
        for shard in self.shards.values().filter(|s| !s.is_empty()) {
            reps.push(node_representation(shard, self.config.representation)?);
        }
        match select_node(prompt.embedding.values(), &reps) {
            Ok(d) => Ok(d),
            Err(Error::NoNodesAvailable) => {
                let fastest = fastest_node(&self.config.nodes).ok_or(Error::NoNodesAvailable)?;
                Ok(ScheduleDecision {
                    node_id: fastest.node_id.clone(),
                    reason: ScheduleReason::SemanticMatch,
                    match_score: f64::NAN,
                    reuse: None,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Runs the configured eviction policy now, deletes payloads of evicted
    /// entries and drops history items that pointed at them.
    pub fn maintain(&mut self) -> Result<MaintenanceReport> {
        self.maintain_with(self.config.maintenance)
    }

    pub fn maintain_with(&mut self, config: MaintenanceConfig) -> Result<MaintenanceReport> {
        self.maintenance_runs += 1;
        let report = run_maintenance(&mut self.shards, &config, self.maintenance_runs)?;
        if !report.evicted.is_empty() {
            let live: BTreeSet<&str> = self
                .shards
                .values()
                .flat_map(|s| s.iter().map(|e| e.payload_uri.as_str()))
                .collect();
            for ev in &report.evicted {
                if !live.contains(ev.entry.payload_uri.as_str()) {
                    self.backends.payloads.delete(&ev.entry.payload_uri)?;
                }
            }
        }
        self.history.forget(&report.evicted_ids());
        Ok(report)
    }

    /// Adds a pre-embedded entry to a node's shard, stamping it with the
    /// current logical time and a fresh id.
    pub fn insert(&mut self, node: &NodeId, mut entry: crate::store::CacheEntry) -> Result<EntryId> {
        self.tick += 1;
        entry.id = self.next_id;
        entry.created_at = self.tick;
        entry.last_access = self.tick;
        entry.hit_count = 0;
        let shard = self
            .shards
            .get_mut(node)
            .ok_or_else(|| Error::UnknownNode(node.clone()))?;
        if !self.backends.payloads.contains(&entry.payload_uri) {
            self.backends
                .payloads
                .put(&entry.payload_uri, entry.caption.as_bytes())?;
        }
        shard.insert(entry)?;
        self.next_id += 1;
        Ok(self.next_id - 1)
    }

    /// Consumes the engine, returning its shards.
    pub fn into_shards(self) -> BTreeMap<NodeId, Shard> {
        self.shards
    }
}
