use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgecache::bench::DriftBenchConfig;
use edgecache::classifier::load_shards;
use edgecache::config::SystemConfig;
use edgecache::maintenance::EvictionPolicy;
use edgecache::payload::DirPayloadStore;
use edgecache::pipeline::Engine;
use edgecache::workload::WorkloadConfig;
use edgecache_cli::commands::{
    bench_table, cmd_bench_evict, cmd_cluster, cmd_ingest, cmd_simulate, cmd_workload, load_config,
};
use edgecache_cli::service::{self, AppState, DEFAULT_ADDR};
use edgecache_cli::{remote, CliError};

#[derive(Parser)]
#[command(
    name = "edgecache",
    version,
    about = "Semantic reference cache for image generation on edge nodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by commands that read a system configuration.
#[derive(Args)]
struct ConfigArgs {
    /// TOML system configuration; defaults describe the reference cluster.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SystemConfig, CliError> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Maintenance overrides.
#[derive(Args)]
struct MaintenanceArgs {
    /// Eviction policy: lcu, lru, lfu or fifo.
    #[arg(long)]
    policy: Option<EvictionPolicy>,
    /// Global entry budget.
    #[arg(long)]
    c_max: Option<usize>,
    /// Requests between maintenance runs.
    #[arg(long)]
    period: Option<u64>,
    /// Restructure prompts before embedding.
    #[arg(long)]
    optimize: bool,
}

impl MaintenanceArgs {
    fn apply(&self, cfg: &mut SystemConfig) -> Result<(), CliError> {
        if let Some(p) = self.policy {
            cfg.maintenance.policy = p;
        }
        if let Some(c) = self.c_max {
            cfg.maintenance.c_max = c;
        }
        if let Some(p) = self.period {
            cfg.maintenance.period = p;
        }
        if self.optimize {
            cfg.optimizer.enabled = true;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic reference corpus and request trace.
    Workload {
        /// Output directory for corpus.jsonl and trace.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// TOML workload parameters; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        corpus_size: Option<usize>,
        #[arg(long)]
        requests: Option<usize>,
        /// Mean arrivals per second.
        #[arg(long)]
        rate: Option<f64>,
        /// Share of requests flagged for quality priority.
        #[arg(long)]
        quality_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed a caption corpus into entry records.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Output entries file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Partition embedded entries across nodes.
    Cluster {
        #[arg(long)]
        entries: PathBuf,
        /// Output directory for the manifest and shard files.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Replay a request trace and write latency, hit-rate and cost reports.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        /// Directory written by `cluster`; omitted means an empty cache.
        #[arg(long)]
        shards: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        maintenance: MaintenanceArgs,
    },
    /// Compare eviction policies on the clustered-drift benchmark.
    BenchEvict {
        #[arg(long)]
        out: PathBuf,
        /// Policies to run; repeat the flag for several. Defaults to all four.
        #[arg(long = "policy")]
        policies: Vec<EvictionPolicy>,
        /// TOML benchmark parameters; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        cycles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve generation requests over HTTP.
    Serve {
        /// Directory written by `cluster`; omitted means an empty cache.
        #[arg(long)]
        shards: Option<PathBuf>,
        /// Store generated payloads under this directory instead of memory.
        #[arg(long)]
        payload_dir: Option<PathBuf>,
        /// Listen address.
        #[arg(long, env = "EDGECACHE_ADDR", default_value = DEFAULT_ADDR)]
        addr: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        maintenance: MaintenanceArgs,
    },
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| edgecache::Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| edgecache::Error::Config(format!("{}: {e}", path.display())).into())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Workload {
            out,
            spec,
            corpus_size,
            requests,
            rate,
            quality_rate,
            seed,
        } => {
            let mut wc: WorkloadConfig = read_toml(spec.as_ref())?;
            if let Some(v) = corpus_size {
                wc.corpus_size = v;
            }
            if let Some(v) = requests {
                wc.requests = v;
            }
            if let Some(v) = rate {
                wc.rate = v;
            }
            if let Some(v) = quality_rate {
                wc.quality_rate = v;
            }
            if let Some(v) = seed {
                wc.seed = v;
            }
            println!("{}", cmd_workload(&wc, &out)?);
        }
        Command::Ingest { corpus, out, config } => {
            println!("{}", cmd_ingest(&config.load()?, &corpus, &out)?);
        }
        Command::Cluster { entries, out, config } => {
            println!("{}", cmd_cluster(&config.load()?, &entries, &out)?);
        }
        Command::Simulate {
            trace,
            shards,
            out,
            config,
            maintenance,
        } => {
            let mut cfg = config.load()?;
            maintenance.apply(&mut cfg)?;
            println!("{}", cmd_simulate(&cfg, &trace, shards.as_deref(), &out)?);
        }
        Command::BenchEvict {
            out,
            policies,
            spec,
            cycles,
            seed,
        } => {
            let mut bc: DriftBenchConfig = read_toml(spec.as_ref())?;
            if let Some(v) = cycles {
                bc.cycles = v;
            }
            if let Some(v) = seed {
                bc.seed = v;
            }
            let policies = if policies.is_empty() {
                EvictionPolicy::ALL.to_vec()
            } else {
                policies
            };
            let results = cmd_bench_evict(&bc, &policies, &out)?;
            print!("{}", bench_table(&results));
        }
        Command::Serve {
            shards,
            payload_dir,
            addr,
            config,
            maintenance,
        } => {
            let mut cfg = config.load()?;
            maintenance.apply(&mut cfg)?;
            let shards = match &shards {
                Some(dir) => load_shards(dir, &cfg.nodes, cfg.dim)?,
                None => Default::default(),
            };
            let mut backends = remote::backends(&cfg)?;
            if let Some(dir) = payload_dir {
                backends.payloads = Box::new(DirPayloadStore::open(dir)?);
            }
            let engine = Engine::new(cfg, shards, backends)?;
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .map_err(|source| CliError::Bind {
                        addr: addr.clone(),
                        source,
                    })?;
                eprintln!("listening on {}", listener.local_addr().map_err(CliError::Serve)?);
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                service::serve(listener, AppState::new(engine), shutdown)
                    .await
                    .map_err(CliError::Serve)
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
