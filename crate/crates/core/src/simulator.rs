//! Trace-driven simulation over a modeled cluster.
//!
//! Requests are replayed in arrival order through an [`Engine`]. Latencies
//! come from the latency model, never from a clock. Each node runs one
//! generation at a time in FIFO order; retrieval and direct returns do not
//! occupy the GPU. The recorded per-request latency is the modeled service
//! time; queueing delay is recorded separately and feeds the simulated span
//! used for vector-database billing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::partition_dataset;
use crate::config::SystemConfig;
use crate::dispatch::{request_latency, DispatchMode, LatencyParams, StepCounts};
use crate::error::{Error, Result};
use crate::maintenance::{EvictionPolicy, MaintenanceLogLine};
use crate::node::{NodeId, NodeProfile};
use crate::pipeline::Engine;
use crate::scheduler::ScheduleReason;
use crate::store::{CacheEntry, Shard};

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub id: u64,
    /// Arrival time in seconds.
    #[serde(rename = "t")]
    pub arrival: f64,
    pub prompt: String,
    #[serde(default)]
    pub user: String,
    #[serde(default)]
    pub quality: bool,
}

/// Parses a trace, checking that arrival times never decrease.
pub fn read_trace(reader: impl Read) -> Result<Vec<TraceRequest>> {
    let mut out: Vec<TraceRequest> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: TraceRequest = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(req.arrival.is_finite() && req.arrival >= 0.0) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("arrival time must be finite and >= 0, got {}", req.arrival),
            });
        }
        if let Some(prev) = out.last() {
            if req.arrival < prev.arrival {
                return Err(Error::NonMonotonicArrivals {
                    line: i + 1,
                    previous: prev.arrival,
                    current: req.arrival,
                });
            }
        }
        out.push(req);
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRequest>> {
    read_trace(fs::File::open(path)?)
}

pub fn write_trace<'a>(trace: impl IntoIterator<Item = &'a TraceRequest>, mut writer: impl Write) -> Result<()> {
    for r in trace {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRecord {
    pub request_id: u64,
    pub node_id: NodeId,
    pub mode: DispatchMode,
    pub reason: Option<ScheduleReason>,
    pub score: Option<f64>,
    /// Modeled service time.
    pub latency_s: f64,
    pub gpu_seconds: f64,
    /// Time spent waiting for the node's GPU.
    pub wait_s: f64,
    pub arrival: f64,
    pub completion: f64,
    /// Maintenance cycle the request fell into.
    pub cycle: u64,
    /// Latency inputs of the serving node.
    pub params: LatencyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleHitRate {
    pub cycle: u64,
    pub requests: usize,
    pub hits: usize,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    /// "cache" for the full pipeline, "baseline" for text-to-image only.
    pub label: String,
    pub policy: Option<EvictionPolicy>,
    pub records: Vec<SimRecord>,
    pub maintenance: Vec<MaintenanceLogLine>,
    /// First arrival to last completion.
    pub span_s: f64,
    /// Whether a vector database runs alongside the GPUs.
    pub uses_vdb: bool,
}

impl SimulationReport {
    pub fn mode_counts(&self) -> BTreeMap<DispatchMode, usize> {
        let mut counts: BTreeMap<DispatchMode, usize> = DispatchMode::ALL.iter().map(|m| (*m, 0)).collect();
        for r in &self.records {
            *counts.entry(r.mode).or_default() += 1;
        }
        counts
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.latency_s).collect()
    }

    pub fn mean_latency(&self) -> f64 {
        mean(&self.latencies())
    }

    /// Hit rate per maintenance cycle: direct returns plus image-to-image
    /// generations over all requests in the cycle.
    pub fn hit_rates(&self) -> Vec<CycleHitRate> {
        let mut by_cycle: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        for r in &self.records {
            let slot = by_cycle.entry(r.cycle).or_default();
            slot.0 += 1;
            if r.mode != DispatchMode::TextToImage {
                slot.1 += 1;
            }
        }
        by_cycle
            .into_iter()
            .map(|(cycle, (requests, hits))| CycleHitRate {
                cycle,
                requests,
                hits,
                hit_rate: hits as f64 / requests as f64,
            })
            .collect()
    }

    pub fn score_samples(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.records.iter().filter_map(|r| r.score).collect();
        s.sort_by(f64::total_cmp);
        s
    }
}

struct GpuQueues {
    free_at: BTreeMap<NodeId, f64>,
}

impl GpuQueues {
    fn new() -> Self {
        GpuQueues {
            free_at: BTreeMap::new(),
        }
    }

    /// Returns (wait, completion) for a request arriving at `arrival`.
    fn admit(&mut self, node: &NodeId, arrival: f64, mode: DispatchMode, p: &LatencyParams) -> (f64, f64) {
        let latency = request_latency(mode, p);
        let gpu = p.gpu_seconds(mode);
        if gpu == 0.0 {
            return (0.0, arrival + latency);
        }
        let ready = arrival + p.t_retrieve;
        let free = self.free_at.entry(node.clone()).or_insert(0.0);
        let start = ready.max(*free);
        *free = start + gpu;
        (start - ready, arrival + latency + (start - ready))
    }
}

fn span(records: &[SimRecord]) -> f64 {
    match (records.first(), records.iter().map(|r| r.completion).reduce(f64::max)) {
        (Some(first), Some(last)) => last - first.arrival,
        _ => 0.0,
    }
}

/// Replays a trace through the engine.
pub fn run(trace: &[TraceRequest], engine: &mut Engine) -> Result<SimulationReport> {
    let mut queues = GpuQueues::new();
    let mut records = Vec::with_capacity(trace.len());
    let mut maintenance = Vec::new();
    let mut prev_arrival = f64::NEG_INFINITY;
    for (i, req) in trace.iter().enumerate() {
        if req.arrival < prev_arrival {
            return Err(Error::NonMonotonicArrivals {
                line: i + 1,
                previous: prev_arrival,
                current: req.arrival,
            });
        }
        prev_arrival = req.arrival;
        let (out, report) = engine.handle(&req.prompt, req.quality)?;
        let params = engine.node(&out.node_id)?.latency_params(engine.config().steps);
        let (wait_s, completion) = queues.admit(&out.node_id, req.arrival, out.mode, &params);
        records.push(SimRecord {
            request_id: req.id,
            node_id: out.node_id,
            mode: out.mode,
            reason: Some(out.reason),
            score: out.score,
            latency_s: out.latency_s,
            gpu_seconds: out.gpu_seconds,
            wait_s,
            arrival: req.arrival,
            completion,
            cycle: out.cycle,
            params,
        });
        if let Some(r) = report {
            maintenance.push(r.log_line());
        }
    }
    Ok(SimulationReport {
        label: "cache".into(),
        policy: Some(engine.config().maintenance.policy),
        span_s: span(&records),
        records,
        maintenance,
        uses_vdb: true,
    })
}

/// Partitions the corpus over the configured nodes and replays the trace.
pub fn simulate(trace: &[TraceRequest], config: &SystemConfig, corpus: Vec<CacheEntry>) -> Result<SimulationReport> {
    let shards = partition_shards(corpus, config)?;
    let mut engine = Engine::local(config.clone(), shards)?;
    run(trace, &mut engine)
}

/// Partitions a corpus for the configured nodes; an empty corpus yields
/// empty shards.
pub fn partition_shards(corpus: Vec<CacheEntry>, config: &SystemConfig) -> Result<BTreeMap<NodeId, Shard>> {
    if corpus.is_empty() {
        return Ok(BTreeMap::new());
    }
    Ok(partition_dataset(corpus, &config.nodes, config.max_iter, config.seed)?.shards)
}

/// Every request generated from scratch on one node with no retrieval.
pub fn baseline(trace: &[TraceRequest], node: &NodeProfile, steps: StepCounts) -> SimulationReport {
    let params = LatencyParams {
        t_retrieve: 0.0,
        ..node.latency_params(steps)
    };
    let mut queues = GpuQueues::new();
    let records: Vec<SimRecord> = trace
        .iter()
        .map(|req| {
            let (wait_s, completion) = queues.admit(&node.node_id, req.arrival, DispatchMode::TextToImage, &params);
            SimRecord {
                request_id: req.id,
                node_id: node.node_id.clone(),
                mode: DispatchMode::TextToImage,
                reason: None,
                score: None,
                latency_s: request_latency(DispatchMode::TextToImage, &params),
                gpu_seconds: params.gpu_seconds(DispatchMode::TextToImage),
                wait_s,
                arrival: req.arrival,
                completion,
                cycle: 0,
                params,
            }
        })
        .collect();
    SimulationReport {
        label: "baseline".into(),
        policy: None,
        span_s: span(&records),
        records,
        maintenance: Vec::new(),
        uses_vdb: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub gpu_by_node: BTreeMap<NodeId, f64>,
    pub gpu: f64,
    pub vdb: f64,
    pub total: f64,
}

/// GPU busy time at each node's hourly price plus vector-database time over
/// the simulated span.
pub fn cost(report: &SimulationReport, profiles: &[NodeProfile], vdb_hourly_cost: f64) -> Result<CostBreakdown> {
    let mut gpu_by_node: BTreeMap<NodeId, f64> = profiles.iter().map(|p| (p.node_id.clone(), 0.0)).collect();
    for r in &report.records {
        let node = profiles
            .iter()
            .find(|p| p.node_id == r.node_id)
            .ok_or_else(|| Error::UnknownNode(r.node_id.clone()))?;
        *gpu_by_node.get_mut(&node.node_id).expect("seeded above") += r.gpu_seconds * node.hourly_cost / 3600.0;
    }
    let gpu = gpu_by_node.values().sum();
    let vdb = if report.uses_vdb {
        report.span_s * vdb_hourly_cost / 3600.0
    } else {
        0.0
    };
    Ok(CostBreakdown {
        gpu_by_node,
        gpu,
        vdb,
        total: gpu + vdb,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p / 100 · n)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub requests: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub p90_over_median: f64,
    pub p95_over_median: f64,
    pub p99_over_median: f64,
    /// Requests completed per simulated second.
    pub throughput: f64,
    pub mode_counts: BTreeMap<DispatchMode, usize>,
}

pub fn summarize(report: &SimulationReport) -> Summary {
    let mut lat = report.latencies();
    lat.sort_by(f64::total_cmp);
    let median = percentile(&lat, 50.0);
    let ratio = |x: f64| if median > 0.0 { x / median } else { 1.0 };
    let (p90, p95, p99) = (percentile(&lat, 90.0), percentile(&lat, 95.0), percentile(&lat, 99.0));
    Summary {
        requests: lat.len(),
        mean: mean(&lat),
        median,
        p90,
        p95,
        p99,
        p90_over_median: ratio(p90),
        p95_over_median: ratio(p95),
        p99_over_median: ratio(p99),
        throughput: if report.span_s > 0.0 {
            lat.len() as f64 / report.span_s
        } else {
            0.0
        },
        mode_counts: report.mode_counts(),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn latency_csv(report: &SimulationReport) -> String {
    let mut s = String::from("request_id,node,mode,score,latency_s\n");
    for r in &report.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.request_id,
            r.node_id,
            r.mode,
            opt(r.score),
            r.latency_s
        );
    }
    s
}

pub fn hitrate_csv(rows: &[(u64, String, f64)]) -> String {
    let mut s = String::from("cycle,policy,hit_rate\n");
    for (cycle, policy, rate) in rows {
        let _ = writeln!(s, "{cycle},{policy},{rate}");
    }
    s
}

pub fn cost_csv(cache: &CostBreakdown, baseline: Option<&CostBreakdown>) -> String {
    let mut s = String::from("component,amount\n");
    for (node, amount) in &cache.gpu_by_node {
        let _ = writeln!(s, "gpu:{node},{amount}");
    }
    let _ = writeln!(s, "gpu,{}", cache.gpu);
    let _ = writeln!(s, "vdb,{}", cache.vdb);
    let _ = writeln!(s, "total,{}", cache.total);
    if let Some(b) = baseline {
        let _ = writeln!(s, "baseline_total,{}", b.total);
        let _ = writeln!(s, "reduction,{}", reduction(b.total, cache.total));
    }
    s
}

pub fn percentiles_csv(summary: &Summary) -> String {
    let mut s = String::from("stat,value\n");
    for (k, v) in [
        ("mean", summary.mean),
        ("median", summary.median),
        ("p90", summary.p90),
        ("p95", summary.p95),
        ("p99", summary.p99),
        ("p90_over_median", summary.p90_over_median),
        ("p95_over_median", summary.p95_over_median),
        ("p99_over_median", summary.p99_over_median),
        ("throughput", summary.throughput),
    ] {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

/// Empirical CDF of best composite scores.
pub fn cdf_csv(report: &SimulationReport) -> String {
    let samples = report.score_samples();
    let n = samples.len() as f64;
    let mut s = String::from("score,cumulative\n");
    for (i, v) in samples.iter().enumerate() {
        let _ = writeln!(s, "{v},{}", (i + 1) as f64 / n);
    }
    s
}

/// `1 - new / old`.
pub fn reduction(old: f64, new: f64) -> f64 {
    if old == 0.0 {
        0.0
    } else {
        1.0 - new / old
    }
}

/// Writes the report files for a simulation and its baseline into `dir`.
pub fn write_reports(
    dir: impl AsRef<Path>,
    config: &SystemConfig,
    cache: &SimulationReport,
    baseline: &SimulationReport,
    calibration_note: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let cache_cost = cost(cache, &config.nodes, config.vdb_hourly_cost)?;
    let base_cost = cost(baseline, &config.nodes, config.vdb_hourly_cost)?;
    let summary = summarize(cache);
    let base_summary = summarize(baseline);
    fs::write(dir.join("latency.csv"), latency_csv(cache))?;
    let policy = cache.policy.map(|p| p.to_string()).unwrap_or_default();
    let rows: Vec<(u64, String, f64)> = cache
        .hit_rates()
        .into_iter()
        .map(|h| (h.cycle, policy.clone(), h.hit_rate))
        .collect();
    fs::write(dir.join("hitrate.csv"), hitrate_csv(&rows))?;
    fs::write(dir.join("cost.csv"), cost_csv(&cache_cost, Some(&base_cost)))?;
    fs::write(dir.join("percentiles.csv"), percentiles_csv(&summary))?;
    fs::write(dir.join("cdf.csv"), cdf_csv(cache))?;
    let mut log = String::new();
    for line in &cache.maintenance {
        log.push_str(&serde_json::to_string(line)?);
        log.push('\n');
    }
    fs::write(dir.join("maintenance.jsonl"), log)?;
    fs::write(
        dir.join("summary.txt"),
        summary_text(
            config,
            &summary,
            &base_summary,
            &cache_cost,
            &base_cost,
            calibration_note,
        ),
    )?;
    Ok(())
}

pub fn summary_text(
    config: &SystemConfig,
    cache: &Summary,
    baseline: &Summary,
    cache_cost: &CostBreakdown,
    base_cost: &CostBreakdown,
    calibration_note: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# calibration");
    let _ = writeln!(
        s,
        "# steps: K={} N={}; thresholds: hi={} lo={}; top_k={}; seed={}",
        config.steps.img2img,
        config.steps.txt2img,
        config.thresholds.hi,
        config.thresholds.lo,
        config.top_k,
        config.seed
    );
    for n in &config.nodes {
        let _ = writeln!(
            s,
            "# node {} ({}): t_step={} t_noise={} t_retrieve={} t_return={} price/h={}",
            n.node_id, n.gpu_class, n.t_step, n.t_noise, n.t_retrieve, n.t_return, n.hourly_cost
        );
    }
    let _ = writeln!(s, "# vdb price/h={}", config.vdb_hourly_cost);
    let _ = writeln!(
        s,
        "# maintenance: policy={} c_max={} period={}",
        config.maintenance.policy, config.maintenance.c_max, config.maintenance.period
    );
    for line in calibration_note.lines() {
        let _ = writeln!(s, "# {line}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "requests: {}", cache.requests);
    for (mode, count) in &cache.mode_counts {
        let _ = writeln!(
            s,
            "mode {mode}: {count} ({:.1}%)",
            100.0 * *count as f64 / cache.requests.max(1) as f64
        );
    }
    let _ = writeln!(s, "mean latency: {:.4} s (baseline {:.4} s)", cache.mean, baseline.mean);
    let _ = writeln!(
        s,
        "latency reduction: {:.2}%",
        100.0 * reduction(baseline.mean, cache.mean)
    );
    let _ = writeln!(
        s,
        "median {:.4} s, p90 {:.4} s, p95 {:.4} s, p99 {:.4} s",
        cache.median, cache.p90, cache.p95, cache.p99
    );
    let _ = writeln!(s, "throughput: {:.4} images/s", cache.throughput);
    let _ = writeln!(
        s,
        "cost: {:.6} (gpu {:.6}, vdb {:.6}); baseline {:.6}",
        cache_cost.total, cache_cost.gpu, cache_cost.vdb, base_cost.total
    );
    let _ = writeln!(
        s,
        "cost reduction: {:.2}%",
        100.0 * reduction(base_cost.total, cache_cost.total)
    );
    s
}
