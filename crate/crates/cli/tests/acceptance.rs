//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Oracles here are written independently of the library
//! code they check.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use edgecache::bench::{run_all, DriftBenchConfig};
use edgecache::classifier::kmeans;
use edgecache::config::SystemConfig;
use edgecache::corpus::embed_corpus;
use edgecache::dispatch::{decide, request_latency, CosineScorer, DispatchMode, LatencyParams, Prompt, Thresholds};
use edgecache::embedding::{synth_clustered_embeddings, Embedding, Modality};
use edgecache::maintenance::{lcu_evict, EvictionPolicy};
use edgecache::node::{NodeId, REFERENCE_T_STEP};
use edgecache::scheduler::{select_node, NodeRepresentation};
use edgecache::simulator::{baseline, cost, simulate, write_reports, SimulationReport};
use edgecache::store::{CacheEntry, EntryId, Hit, Shard};
use edgecache::workload::{generate, WorkloadConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Independent formulas

/// Latency written out per branch, without one-hot flags.
fn latency_oracle(mode: DispatchMode, p: &LatencyParams) -> f64 {
    match mode {
        DispatchMode::ReturnCached => p.t_retrieve + p.t_return,
        DispatchMode::ImageToImage => p.t_retrieve + (p.t_noise + f64::from(p.img2img_steps) * p.t_step),
        DispatchMode::TextToImage => p.t_retrieve + f64::from(p.txt2img_steps) * p.t_step,
    }
}

fn same_to_machine_precision(a: f64, b: f64) -> bool {
    (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs())
}

fn seq_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn one_hot(mode: DispatchMode) -> [u8; 3] {
    match mode {
        DispatchMode::ReturnCached => [1, 0, 0],
        DispatchMode::ImageToImage => [0, 1, 0],
        DispatchMode::TextToImage => [0, 0, 1],
    }
}

// ---------------------------------------------------------------------------
// Criteria 1 and 2: reference workload

struct Reference {
    config: SystemConfig,
    cache: SimulationReport,
    base: SimulationReport,
    elapsed: Duration,
}

fn reference_run() -> Reference {
    let started = Instant::now();
    let config = SystemConfig::default();
    let w = generate(&WorkloadConfig::default()).expect("workload");
    let corpus = embed_corpus(&w.corpus, &config.hash_embedder(), 0).expect("embed");
    let cache = simulate(&w.trace, &config, corpus).expect("simulate");
    let base = baseline(&w.trace, &config.nodes[0], config.steps);
    Reference {
        config,
        cache,
        base,
        elapsed: started.elapsed(),
    }
}

fn mix(report: &SimulationReport) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &report.records {
        *counts.entry(r.mode.as_str()).or_default() += 1;
    }
    counts
        .iter()
        .map(|(m, n)| format!("{m}={n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_latency(r: &Reference) -> Outcome {
    check!(
        r.cache.records.len() == 5000,
        "expected 5000 requests, got {}",
        r.cache.records.len()
    );
    let mut sum = 0.0;
    for rec in &r.cache.records {
        let expect = latency_oracle(rec.mode, &rec.params);
        check!(
            same_to_machine_precision(rec.latency_s, expect),
            "request {} latency {} differs from formula {}",
            rec.request_id,
            rec.latency_s,
            expect
        );
        sum += expect;
    }
    let mean = sum / r.cache.records.len() as f64;
    let base_expected = 50.0 * REFERENCE_T_STEP;
    let base_mean = r.base.records.iter().map(|x| x.latency_s).sum::<f64>() / r.base.records.len() as f64;
    check!(
        (base_mean - base_expected).abs() < 1e-9 && (base_expected - 2.24).abs() < 1e-12,
        "baseline mean {base_mean} is not 2.24 s"
    );
    let red = 1.0 - mean / base_mean;
    check!(r.elapsed < Duration::from_secs(30), "took {:?}", r.elapsed);
    let line = format!(
        "mean {mean:.3} s vs {base_mean:.3} s, reduction {:.1}% (band 35-47%), mix [{}], {:.1} s",
        100.0 * red,
        mix(&r.cache),
        r.elapsed.as_secs_f64()
    );
    check!((0.35..=0.47).contains(&red), "{line}");
    Ok(line)
}

fn cost_oracle(report: &SimulationReport, config: &SystemConfig) -> f64 {
    let price: BTreeMap<&NodeId, f64> = config.nodes.iter().map(|n| (&n.node_id, n.hourly_cost)).collect();
    let gpu: f64 = report
        .records
        .iter()
        .map(|r| {
            let secs = match r.mode {
                DispatchMode::ReturnCached => 0.0,
                DispatchMode::ImageToImage => r.params.t_noise + f64::from(r.params.img2img_steps) * r.params.t_step,
                DispatchMode::TextToImage => f64::from(r.params.txt2img_steps) * r.params.t_step,
            };
            secs * price[&r.node_id] / 3600.0
        })
        .sum();
    let vdb = if report.uses_vdb {
        let first = report.records.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
        let last = report
            .records
            .iter()
            .map(|r| r.completion)
            .fold(f64::NEG_INFINITY, f64::max);
        (last - first) * 0.12 / 3600.0
    } else {
        0.0
    };
    gpu + vdb
}

fn criterion_cost(r: &Reference) -> Outcome {
    let cache = cost_oracle(&r.cache, &r.config);
    let base = cost_oracle(&r.base, &r.config);
    let lib_cache = cost(&r.cache, &r.config.nodes, r.config.vdb_hourly_cost).map_err(|e| e.to_string())?;
    let lib_base = cost(&r.base, &r.config.nodes, r.config.vdb_hourly_cost).map_err(|e| e.to_string())?;
    check!(
        (lib_cache.total - cache).abs() < 1e-9 * cache && (lib_base.total - base).abs() < 1e-9 * base,
        "library cost {} / {} differs from oracle {cache} / {base}",
        lib_cache.total,
        lib_base.total
    );
    let red = 1.0 - cache / base;
    let line = format!(
        "cost {cache:.4} vs {base:.4} (gpu {:.4} + vdb {:.4}), reduction {:.1}% (band 40-56%), shared run {:.1} s",
        lib_cache.gpu,
        lib_cache.vdb,
        100.0 * red,
        r.elapsed.as_secs_f64()
    );
    check!(r.elapsed < Duration::from_secs(30), "{line}");
    check!((0.40..=0.56).contains(&red), "{line}");
    Ok(line)
}

// ---------------------------------------------------------------------------
// Criterion 3

fn criterion_lcu_beats_baselines() -> Outcome {
    let started = Instant::now();
    let cfg = DriftBenchConfig::default();
    check!(
        cfg.clusters == 3 && cfg.cycles == 5,
        "benchmark is not the 3-cluster, 5-cycle workload"
    );
    check!(
        cfg.c_max() * 10 == cfg.inserts_per_cycle * 6,
        "budget {} is not 60% of {}",
        cfg.c_max(),
        cfg.inserts_per_cycle
    );
    let results = run_all(&cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let rate = |p: EvictionPolicy| {
        let r = results.iter().find(|r| r.policy == p).expect("policy ran");
        let last = r.cycles.last().expect("cycles");
        last.hits as f64 / last.queries as f64
    };
    let lcu = rate(EvictionPolicy::Lcu);
    let mut parts = vec![format!("lcu {:.1}%", 100.0 * lcu)];
    let mut worst_margin = f64::INFINITY;
    for p in [EvictionPolicy::Lru, EvictionPolicy::Lfu, EvictionPolicy::Fifo] {
        let other = rate(p);
        parts.push(format!("{p} {:.1}%", 100.0 * other));
        worst_margin = worst_margin.min(lcu - other);
    }
    let line = format!(
        "cycle-5 hit rates {}, smallest margin {:.1} pp (need >= 3), {:.2} s",
        parts.join(", "),
        100.0 * worst_margin,
        elapsed.as_secs_f64()
    );
    check!(worst_margin >= 0.03, "{line}");
    check!(elapsed < Duration::from_secs(10), "{line}");
    Ok(line)
}

// ---------------------------------------------------------------------------
// Criterion 4

fn criterion_latency_formula(reference: &Reference) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let n = rng.random_range(2..=200u32);
        let p = LatencyParams {
            t_retrieve: rng.random_range(0.0..1.0),
            t_return: rng.random_range(0.0..0.5),
            t_noise: rng.random_range(0.0..0.5),
            t_step: rng.random_range(1e-4..0.5),
            img2img_steps: rng.random_range(1..n),
            txt2img_steps: n,
        };
        let mode = DispatchMode::ALL[rng.random_range(0..3)];
        let got = request_latency(mode, &p);
        let want = latency_oracle(mode, &p);
        check!(
            same_to_machine_precision(got, want),
            "tuple {i}: {mode} {p:?} gave {got}, formula {want}"
        );
    }
    let mut decisions = 0;
    for report in [&reference.cache, &reference.base] {
        for r in &report.records {
            let (x, y, z) = r.mode.flags();
            check!(
                [x, y, z] == one_hot(r.mode) && x + y + z == 1,
                "request {} flags {:?} are not one-hot for {}",
                r.request_id,
                (x, y, z),
                r.mode
            );
            decisions += 1;
        }
    }
    Ok(format!(
        "1000 random tuples match the branch formula; one-hot flags on {decisions} simulated decisions"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5

/// Unit vectors whose dot products are exact in any summation order: four
/// entries of +-1/2, or one entry of +-1.
fn grid_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if rng.random_bool(0.1) {
        v[rng.random_range(0..dim)] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        return v;
    }
    let mut idx: Vec<usize> = (0..dim).collect();
    for i in 0..4 {
        let j = rng.random_range(i..dim);
        idx.swap(i, j);
        v[idx[i]] = if rng.random_bool(0.5) { 0.5 } else { -0.5 };
    }
    v
}

fn top_k_oracle(entries: &[(EntryId, Vec<f64>, Vec<f64>)], q: &[f64], image: bool, k: usize) -> Vec<(EntryId, f64)> {
    let mut all: Vec<(EntryId, f64)> = entries
        .iter()
        .map(|(id, img, txt)| (*id, seq_dot(q, if image { img } else { txt })))
        .collect();
    // Similarity descending, then id ascending; full sort, no selection.
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn criterion_retrieval() -> Outcome {
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut queries = 0;
    for s in 0..100 {
        let n = rng.random_range(0..=300usize);
        let mut shard = Shard::new(NodeId::new("n"), dim, 1);
        let mut entries = Vec::new();
        let mut ids: Vec<EntryId> = (0..(n as u64 * 3)).collect();
        for i in 0..n {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
        }
        for &id in ids.iter().take(n) {
            let (img, txt) = (grid_vector(&mut rng, dim), grid_vector(&mut rng, dim));
            let e = CacheEntry::new(
                id,
                "c",
                "u",
                Embedding::from_unit(img.clone(), Modality::Image).unwrap(),
                Embedding::from_unit(txt.clone(), Modality::Text).unwrap(),
                0,
            );
            shard.insert(e).map_err(|e| e.to_string())?;
            entries.push((id, img, txt));
        }
        for _ in 0..5 {
            let q = grid_vector(&mut rng, dim);
            let qe = Embedding::from_unit(q.clone(), Modality::Text).unwrap();
            let k = rng.random_range(1..=20usize);
            let mut union = BTreeSet::new();
            for (image, modality) in [(true, Modality::Image), (false, Modality::Text)] {
                let got: Vec<(EntryId, f64)> = shard
                    .top_k(&qe, modality, k)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|Hit { id, similarity }| (id, similarity))
                    .collect();
                let want = top_k_oracle(&entries, &q, image, k);
                check!(
                    got == want,
                    "shard {s} k={k} {modality:?}: got {got:?}, oracle {want:?}"
                );
                union.extend(want.iter().map(|(id, _)| *id));
            }
            let dual = shard.dual_retrieve(&qe, k).map_err(|e| e.to_string())?;
            check!(
                dual == union,
                "shard {s} k={k}: dual retrieval {dual:?}, oracle {union:?}"
            );
            queries += 1;
        }
    }
    Ok(format!(
        "100 shards (<= 300 entries, D=8), {queries} queries: top-k and dual retrieval identical to brute force, ties included"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6

fn criterion_kmeans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for run in 0..50u64 {
        let k = rng.random_range(2..=5usize);
        let samples: Vec<Embedding> = synth_clustered_embeddings(k, 40, 0.6, run, 16)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        let res = kmeans(&samples, k, 100, run).map_err(|e| e.to_string())?;
        for w in res.history.windows(2) {
            check!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "run {run}: objective rose {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    let data = synth_clustered_embeddings(2, 200, 0.05, 11, 32).map_err(|e| e.to_string())?;
    let samples: Vec<Embedding> = data.iter().map(|(e, _)| e.clone()).collect();
    let res = kmeans(&samples, 2, 100, 11).map_err(|e| e.to_string())?;
    let n = data.len() as f64;
    let same = data.iter().zip(&res.assignments).filter(|((_, l), a)| l == *a).count() as f64;
    let agreement = (same / n).max(1.0 - same / n);
    check!(agreement >= 0.98, "two-cluster agreement {agreement}");

    let samples: Vec<Embedding> = synth_clustered_embeddings(3, 30, 0.5, 12, 16)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    let res = kmeans(&samples, 1, 100, 12).map_err(|e| e.to_string())?;
    let mut mean = vec![0.0; 16];
    for s in &samples {
        for (m, x) in mean.iter_mut().zip(s.values()) {
            *m += x / samples.len() as f64;
        }
    }
    let err = res.centroids[0]
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check!(err <= 1e-9, "k=1 centroid off the sample mean by {err}");
    Ok(format!(
        "objective non-increasing in 50 runs; two-cluster agreement {:.3}; k=1 centroid within {err:.1e} of the mean",
        agreement
    ))
}

// ---------------------------------------------------------------------------
// Criterion 7

fn criterion_argmax_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 16;
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
    for i in 0..200 {
        let q = gauss(&mut rng);
        let reps: Vec<NodeRepresentation> = (0..rng.random_range(1..=6))
            .map(|j| NodeRepresentation {
                node_id: NodeId::new(format!("n{j}")),
                repr_vec: gauss(&mut rng),
            })
            .collect();
        let base = select_node(&q, &reps).map_err(|e| e.to_string())?.node_id;
        let c_rep = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled: Vec<NodeRepresentation> = reps
            .iter()
            .map(|r| NodeRepresentation {
                node_id: r.node_id.clone(),
                repr_vec: r.repr_vec.iter().map(|x| x * c_rep).collect(),
            })
            .collect();
        for c in [0.1, 10.0] {
            let qs: Vec<f64> = q.iter().map(|x| x * c).collect();
            let got = select_node(&qs, &scaled).map_err(|e| e.to_string())?.node_id;
            check!(
                got == base,
                "instance {i}: c={c}, c'={c_rep} picked {got} instead of {base}"
            );
        }
    }
    Ok("200 instances: choice unchanged for c in {0.1, 10} and common c' in [0.01, 100]".into())
}

// ---------------------------------------------------------------------------
// Criterion 8

fn seq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn criterion_lcu_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 6;
    let mut total_evicted = 0;
    for f in 0..100 {
        let mut shards: BTreeMap<NodeId, Shard> = BTreeMap::new();
        let mut raw: BTreeMap<NodeId, Vec<(EntryId, Vec<f64>)>> = BTreeMap::new();
        let mut next: EntryId = 0;
        for s in 0..rng.random_range(1..=4) {
            let node = NodeId::new(format!("node-{s}"));
            let mut shard = Shard::new(node.clone(), dim, 1);
            let mut rows = Vec::new();
            for _ in 0..rng.random_range(0..=40) {
                // Repeat an earlier vector now and then to create distance ties.
                let v: Vec<f64> = if !rows.is_empty() && rng.random_bool(0.2) {
                    let (_, v): &(EntryId, Vec<f64>) = &rows[rng.random_range(0..rows.len())];
                    v.clone()
                } else {
                    let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let n = seq_norm(&g);
                    g.into_iter().map(|x| x / n).collect()
                };
                next += rng.random_range(1..4);
                let e = CacheEntry::new(
                    next,
                    "c",
                    "u",
                    Embedding::from_unit(v.clone(), Modality::Image).unwrap(),
                    Embedding::from_unit(v.clone(), Modality::Text).unwrap(),
                    0,
                );
                shard.insert(e).map_err(|e| e.to_string())?;
                rows.push((next, v));
            }
            shards.insert(node.clone(), shard);
            raw.insert(node, rows);
        }
        let total: usize = raw.values().map(Vec::len).sum();
        let c_max = rng.random_range(1..=total.max(1) + 5);

        // Oracle: centroids from the untouched federation, one global list
        // sorted by distance descending (larger id first on ties), popped
        // from the front until the total fits.
        let mut cands: Vec<(f64, EntryId, NodeId)> = Vec::new();
        for (node, rows) in &raw {
            if rows.is_empty() {
                continue;
            }
            let mut mu = vec![0.0; dim];
            for (_, v) in rows {
                for (m, x) in mu.iter_mut().zip(v) {
                    *m += x;
                }
            }
            let mu: Vec<f64> = mu.iter().map(|m| m / rows.len() as f64).collect();
            for (id, v) in rows {
                let diff: Vec<f64> = v.iter().zip(&mu).map(|(a, b)| a - b).collect();
                cands.push((seq_norm(&diff), *id, node.clone()));
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        let mut want_sizes: BTreeMap<NodeId, usize> = raw.iter().map(|(n, r)| (n.clone(), r.len())).collect();
        let mut want_ids = BTreeSet::new();
        let mut remaining = total;
        for (_, id, node) in &cands {
            if remaining <= c_max {
                break;
            }
            want_ids.insert(*id);
            *want_sizes.get_mut(node).unwrap() -= 1;
            remaining -= 1;
        }

        let evicted = lcu_evict(&mut shards, c_max).map_err(|e| e.to_string())?;
        let got_ids: BTreeSet<EntryId> = evicted.iter().map(|e| e.entry.id).collect();
        let got_sizes: BTreeMap<NodeId, usize> = shards.iter().map(|(n, s)| (n.clone(), s.len())).collect();
        check!(
            got_ids == want_ids,
            "federation {f}: evicted {got_ids:?}, oracle {want_ids:?}"
        );
        check!(
            got_sizes == want_sizes,
            "federation {f}: sizes {got_sizes:?}, oracle {want_sizes:?}"
        );
        total_evicted += got_ids.len();
    }
    Ok(format!(
        "100 federations: evicted id sets and final sizes match the oracle ({total_evicted} evictions)"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn library_reports(dir: &Path) {
    let config = SystemConfig {
        maintenance: edgecache::maintenance::MaintenanceConfig {
            c_max: 700,
            period: 200,
            policy: EvictionPolicy::Lcu,
        },
        ..SystemConfig::default()
    };
    let wc = WorkloadConfig {
        corpus_size: 600,
        requests: 800,
        quality_rate: 0.05,
        ..WorkloadConfig::default()
    };
    let w = generate(&wc).unwrap();
    let corpus = embed_corpus(&w.corpus, &config.hash_embedder(), 0).unwrap();
    let cache = simulate(&w.trace, &config, corpus).unwrap();
    let base = baseline(&w.trace, &config.nodes[0], config.steps);
    write_reports(dir, &config, &cache, &base, "note").unwrap();
}

fn cli_batch(dir: &Path) {
    let bin = env!("CARGO_BIN_EXE_edgecache");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let p = |s: &str| dir.join(s).display().to_string();
    run(&[
        "workload",
        "--out",
        &p("data"),
        "--corpus-size",
        "300",
        "--requests",
        "400",
    ]);
    run(&[
        "ingest",
        "--corpus",
        &p("data/corpus.jsonl"),
        "--out",
        &p("entries.jsonl"),
    ]);
    run(&["cluster", "--entries", &p("entries.jsonl"), "--out", &p("shards")]);
    run(&[
        "simulate",
        "--trace",
        &p("data/trace.jsonl"),
        "--shards",
        &p("shards"),
        "--out",
        &p("report"),
        "--period",
        "100",
        "--c-max",
        "300",
    ]);
    fs::write(
        dir.join("bench.toml"),
        "inserts_per_cycle = 300\nqueries_per_cycle = 150\n",
    )
    .unwrap();
    run(&["bench-evict", "--out", &p("bench"), "--spec", &p("bench.toml")]);
}

fn criterion_determinism() -> Outcome {
    let mut files = 0;
    for (what, produce) in [
        ("library simulation", library_reports as fn(&Path)),
        ("CLI batch commands", cli_batch),
    ] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        produce(a.path());
        produce(b.path());
        let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
        check!(!ta.is_empty(), "{what} wrote nothing");
        check!(
            ta.keys().eq(tb.keys()),
            "{what}: file sets differ: {:?} vs {:?}",
            ta.keys(),
            tb.keys()
        );
        for (name, bytes) in &ta {
            check!(tb[name] == *bytes, "{what}: {name} differs between runs");
        }
        files += ta.len();
    }
    Ok(format!(
        "{files} report and batch output files byte-identical across reruns"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 10

fn criterion_branch_boundaries() -> Outcome {
    let dim = 4;
    let unit_at = |c: f64| vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0];
    let prompt = Prompt {
        text: "p".into(),
        embedding: Embedding::from_unit(vec![1.0, 0.0, 0.0, 0.0], Modality::Text).unwrap(),
    };
    let eps = 1e-9;
    let cases = [
        (0.4, DispatchMode::ImageToImage),
        (0.5, DispatchMode::ImageToImage),
        (0.5 + eps, DispatchMode::ReturnCached),
        (0.4 - eps, DispatchMode::TextToImage),
    ];
    let thresholds = Thresholds::default();
    let mut seen = Vec::new();
    for (c, want) in cases {
        let mut shard = Shard::new(NodeId::new("n"), dim, 1);
        let v = unit_at(c);
        shard
            .insert(CacheEntry::new(
                1,
                "ref",
                "ref.img",
                Embedding::from_unit(v.clone(), Modality::Image).unwrap(),
                Embedding::from_unit(v, Modality::Text).unwrap(),
                0,
            ))
            .map_err(|e| e.to_string())?;
        let d = decide(&prompt, &shard, 5, &thresholds, &CosineScorer).map_err(|e| e.to_string())?;
        check!(d.best_score == Some(c), "composite for {c} came out {:?}", d.best_score);
        check!(d.mode == want, "composite {c} dispatched {} instead of {want}", d.mode);
        seen.push(format!("{c}->{}", d.mode));
    }
    Ok(seen.join(", "))
}

// ---------------------------------------------------------------------------

fn main() {
    // Criteria report failures themselves; keep panic noise out of the table.
    panic::set_hook(Box::new(|_| {}));
    let guarded = |f: &dyn Fn() -> Outcome| -> Outcome {
        panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        })
    };
    let reference = panic::catch_unwind(reference_run).map_err(|_| "reference run panicked".to_string());
    let with_ref = |f: fn(&Reference) -> Outcome| -> Outcome {
        match &reference {
            Ok(r) => guarded(&|| f(r)),
            Err(e) => Err(e.clone()),
        }
    };

    let results: Vec<(&str, Outcome)> = vec![
        ("1 latency reduction", with_ref(criterion_latency)),
        ("2 cost reduction", with_ref(criterion_cost)),
        ("3 lcu beats baselines", guarded(&criterion_lcu_beats_baselines)),
        (
            "4 latency formula and one-hot flags",
            with_ref(criterion_latency_formula),
        ),
        ("5 retrieval oracle", guarded(&criterion_retrieval)),
        ("6 k-means properties", guarded(&criterion_kmeans)),
        ("7 scheduler argmax invariance", guarded(&criterion_argmax_invariance)),
        ("8 lcu eviction oracle", guarded(&criterion_lcu_fidelity)),
        ("9 determinism", guarded(&criterion_determinism)),
        ("10 branch boundaries", guarded(&criterion_branch_boundaries)),
    ];
    let _ = panic::take_hook();

    println!("\nacceptance criteria");
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed\n", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
