//! End-to-end replay properties on a small generated workload.

use std::collections::BTreeMap;

use edgecache::config::SystemConfig;
use edgecache::corpus::embed_corpus;
use edgecache::dispatch::DispatchMode;
use edgecache::maintenance::{EvictionPolicy, MaintenanceConfig};
use edgecache::node::NodeId;
use edgecache::simulator::{baseline, cost, simulate, summarize, SimulationReport};
use edgecache::workload::{generate, WorkloadConfig};

fn small(policy: EvictionPolicy) -> (SystemConfig, SimulationReport, SimulationReport) {
    let config = SystemConfig {
        maintenance: MaintenanceConfig {
            c_max: 350,
            period: 100,
            policy,
        },
        ..SystemConfig::default()
    };
    let wc = WorkloadConfig {
        corpus_size: 300,
        requests: 500,
        rate: 2.0,
        quality_rate: 0.05,
        seed: 17,
        ..WorkloadConfig::default()
    };
    let w = generate(&wc).unwrap();
    let corpus = embed_corpus(&w.corpus, &config.hash_embedder(), 0).unwrap();
    let cache = simulate(&w.trace, &config, corpus).unwrap();
    let base = baseline(&w.trace, &config.nodes[0], config.steps);
    (config, cache, base)
}

#[test]
fn every_mode_appears_and_latencies_are_bounded() {
    let (_, cache, _) = small(EvictionPolicy::Lcu);
    let counts = cache.mode_counts();
    for m in DispatchMode::ALL {
        assert!(counts[&m] > 0, "{m} never chosen");
    }
    for r in &cache.records {
        let full = r.params.t_retrieve + f64::from(r.params.txt2img_steps) * r.params.t_step;
        assert!(r.latency_s > 0.0 && r.latency_s <= full + 1e-12);
        assert!(r.wait_s >= 0.0);
    }
}

#[test]
fn each_gpu_runs_one_request_at_a_time() {
    let (_, cache, base) = small(EvictionPolicy::Lcu);
    for report in [&cache, &base] {
        let mut busy: BTreeMap<&NodeId, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &report.records {
            if r.gpu_seconds == 0.0 {
                assert_eq!(r.wait_s, 0.0);
                continue;
            }
            let start = r.arrival + r.params.t_retrieve + r.wait_s;
            busy.entry(&r.node_id).or_default().push((start, start + r.gpu_seconds));
            assert!((r.completion - (r.arrival + r.wait_s + r.latency_s)).abs() < 1e-9);
        }
        for spans in busy.values() {
            for w in spans.windows(2) {
                assert!(w[1].0 >= w[0].1 - 1e-9, "overlap {w:?}");
            }
        }
    }
}

#[test]
fn maintenance_keeps_the_budget_and_costs_add_up() {
    for policy in EvictionPolicy::ALL {
        let (config, cache, _) = small(policy);
        assert_eq!(cache.maintenance.len(), 5);
        for m in &cache.maintenance {
            assert!(m.sizes_after.iter().sum::<usize>() <= 350, "{policy}: {m:?}");
        }
        let c = cost(&cache, &config.nodes, config.vdb_hourly_cost).unwrap();
        assert!((c.total - (c.gpu + c.vdb)).abs() < 1e-12);
        assert!((c.vdb - cache.span_s * config.vdb_hourly_cost / 3600.0).abs() < 1e-12);
    }
}

#[test]
fn baseline_is_text_to_image_without_retrieval() {
    let (config, _, base) = small(EvictionPolicy::Lcu);
    let s = summarize(&base);
    assert_eq!(s.mode_counts[&DispatchMode::TextToImage], 500);
    assert!((s.mean - 50.0 * config.nodes[0].t_step).abs() < 1e-12);
    let c = cost(&base, &config.nodes, config.vdb_hourly_cost).unwrap();
    assert_eq!(c.vdb, 0.0);
}
