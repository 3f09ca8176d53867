//! Batch subcommands. Each reads its inputs, writes its outputs and returns
//! a short summary for the terminal.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use edgecache::bench::{hitrate_rows, run_drift_bench, BenchResult, DriftBenchConfig};
use edgecache::classifier::{load_shards, partition_dataset};
use edgecache::config::SystemConfig;
use edgecache::corpus::{embed_corpus, read_corpus, write_corpus};
use edgecache::maintenance::EvictionPolicy;
use edgecache::pipeline::Engine;
use edgecache::simulator::{
    baseline, cost, hitrate_csv, load_trace, reduction, run, summarize, write_reports, write_trace,
};
use edgecache::store::{read_entries, write_entries};
use edgecache::workload::{generate, WorkloadConfig};
use edgecache::{Error, Result};

use crate::remote;

/// Stated at the top of every simulation summary.
pub const CALIBRATION_NOTE: &str = "Latencies come from the step-time model calibrated so that a 50-step \
     text-to-image request on the reference GPU takes 2.24 s; no diffusion model was run.";

pub fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::load(p),
        None => Ok(SystemConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path, what: &str) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{what} {}: {e}", path.display()))))
}

/// Writes `corpus.jsonl` and `trace.jsonl` into `out`.
pub fn cmd_workload(config: &WorkloadConfig, out: &Path) -> Result<String> {
    let w = generate(config)?;
    fs::create_dir_all(out)?;
    let mut f = create(&out.join("corpus.jsonl"))?;
    write_corpus(&w.corpus, &mut f)?;
    f.flush()?;
    let mut f = create(&out.join("trace.jsonl"))?;
    write_trace(&w.trace, &mut f)?;
    f.flush()?;
    Ok(format!(
        "wrote {} corpus records and {} requests to {}",
        w.corpus.len(),
        w.trace.len(),
        out.display()
    ))
}

/// Embeds a caption corpus into entry records ready for partitioning.
pub fn cmd_ingest(config: &SystemConfig, corpus: &Path, out: &Path) -> Result<String> {
    let records = read_corpus(open(corpus, "corpus")?)?;
    let backends = remote::backends(config)?;
    let entries = embed_corpus(&records, backends.embedder.as_ref(), 0)?;
    let mut f = create(out)?;
    write_entries(&entries, &mut f)?;
    f.flush()?;
    Ok(format!("embedded {} entries into {}", entries.len(), out.display()))
}

/// Partitions embedded entries across the configured nodes and writes the
/// manifest, centroids and per-node shard files into `out`.
pub fn cmd_cluster(config: &SystemConfig, entries: &Path, out: &Path) -> Result<String> {
    let entries = read_entries(open(entries, "entries")?)?;
    let partition = partition_dataset(entries, &config.nodes, config.max_iter, config.seed)?;
    partition.save(out)?;
    let sizes: Vec<String> = partition
        .shards
        .iter()
        .map(|(id, s)| format!("{id}={}", s.len()))
        .collect();
    Ok(format!(
        "partitioned into {} shards ({}) after {} iterations",
        partition.shards.len(),
        sizes.join(", "),
        partition.clustering.iterations
    ))
}

/// Replays a trace over partitioned shards and writes the report files into
/// `out`. A missing `shards` directory means an empty cache.
pub fn cmd_simulate(config: &SystemConfig, trace: &Path, shards: Option<&Path>, out: &Path) -> Result<String> {
    let trace = load_trace(trace).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("trace {}: {io}", trace.display()),
        )),
        other => other,
    })?;
    let shards = match shards {
        Some(dir) => load_shards(dir, &config.nodes, config.dim)?,
        None => Default::default(),
    };
    let mut engine = Engine::new(config.clone(), shards, remote::backends(config)?)?;
    let cache = run(&trace, &mut engine)?;
    let base = baseline(&trace, &config.nodes[0], config.steps);
    write_reports(out, config, &cache, &base, CALIBRATION_NOTE)?;
    let (cs, bs) = (summarize(&cache), summarize(&base));
    let cc = cost(&cache, &config.nodes, config.vdb_hourly_cost)?;
    let bc = cost(&base, &config.nodes, config.vdb_hourly_cost)?;
    let mix: Vec<String> = cs.mode_counts.iter().map(|(m, n)| format!("{m}={n}")).collect();
    Ok(format!(
        "{} requests ({}), mean latency {:.3} s vs {:.3} s ({:.1}% lower), cost {:.4} vs {:.4} ({:.1}% lower); reports in {}",
        cs.requests,
        mix.join(", "),
        cs.mean,
        bs.mean,
        100.0 * reduction(bs.mean, cs.mean),
        cc.total,
        bc.total,
        100.0 * reduction(bc.total, cc.total),
        out.display()
    ))
}

/// Runs the drift benchmark for the requested policies and writes
/// `hitrate.csv` into `out`.
pub fn cmd_bench_evict(config: &DriftBenchConfig, policies: &[EvictionPolicy], out: &Path) -> Result<Vec<BenchResult>> {
    let results = policies
        .iter()
        .map(|&p| run_drift_bench(config, p))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("hitrate.csv"), hitrate_csv(&hitrate_rows(&results)))?;
    Ok(results)
}

/// One line per policy with its hit rate after every cycle.
pub fn bench_table(results: &[BenchResult]) -> String {
    let mut s = String::new();
    for r in results {
        let rates: Vec<String> = r
            .cycles
            .iter()
            .map(|c| format!("{:5.1}%", 100.0 * c.hit_rate))
            .collect();
        s.push_str(&format!("{:<5} {}\n", r.policy, rates.join(" ")));
    }
    s
}
