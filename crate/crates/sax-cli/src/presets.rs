//! Built-in experiment specs.
//!
//! Each preset is a complete [`ExperimentSpec`] with a generated dataset, so
//! `sax matrix --preset <name> --out <dir>` works with no other files.

use sax_core::ann::hnsw::BuildParams;
use sax_core::engine::EngineConfig;
use sax_core::orchestrator::{RetrievalMode, RunConfig};
use sax_core::scheduler::SchedPolicy;
use sax_core::workload::{Arrival, ClampedNormal, WorkloadConfig};
use sax_core::{Result, SaxError};

use crate::config::GenDataConfig;
use crate::matrix::{DatasetSource, ExperimentSpec, IndexSource, NamedRun};

pub const PRESET_NAMES: [&str; 5] = ["e-range", "e-magnify", "e-ablate", "e-online", "e-maturity"];

pub fn preset(name: &str) -> Result<ExperimentSpec> {
    match name {
        "e-range" => Ok(range_sweep()),
        "e-magnify" => Ok(cost_magnification()),
        "e-ablate" => Ok(contended_ablation()),
        "e-online" => Ok(online_rates()),
        "e-maturity" => Ok(maturity_profile()),
        other => Err(SaxError::config(format!(
            "unknown preset {other:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

fn spec(name: &str, dataset: GenDataConfig, index: BuildParams, runs: Vec<NamedRun>) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        output_dir: None,
        dataset: DatasetSource::Generate(dataset),
        index: IndexSource::Build(index),
        workload: None,
        ann_workers: 1,
        runs,
    }
}

/// Contended serving base: offline burst of document-heavy requests against
/// a cache roughly 2x oversubscribed, with seats scarcer than requests so
/// admission order decides who keeps their cached context.
fn contended_base() -> RunConfig {
    RunConfig {
        retrieval_mode: RetrievalMode::Ann { ef: 100 },
        policy: SchedPolicy::Fcfs,
        top_k: 5,
        engine: EngineConfig {
            prefill_cost: 2e-5,
            decode_cost: 1e-3,
            max_batch_seqs: 16,
            kv_capacity_blocks: 2560,
            ..EngineConfig::default()
        },
        workload: WorkloadConfig {
            seed: 14,
            num_requests: 48,
            arrival: Arrival::Offline,
            retrievals_per_request: ClampedNormal::new(2.0, 1.0, 1, 4),
            segment_tokens: ClampedNormal::new(30.0, 10.0, 10, 80),
            doc_tokens: 200,
            query_noise: 0.05,
            retry_cap: 3,
        },
        per_candidate_cost: 2e-3,
        enn_cost: None,
    }
}

/// Scheduling/caching ablation: exact scan baseline thinking removed; the
/// four steps are no-cache FCFS, cached FCFS, priority scheduling, and
/// priority with readiness-gated early termination.
fn contended_ablation() -> ExperimentSpec {
    let base = contended_base();
    let no_cache = RunConfig {
        engine: EngineConfig { prefix_cache: false, ..base.engine.clone() },
        ..base.clone()
    };
    let priority = RunConfig { policy: SchedPolicy::Priority { groups: 6 }, ..base.clone() };
    let nonstall = RunConfig {
        policy: SchedPolicy::Priority { groups: 6 },
        retrieval_mode: RetrievalMode::AnnNonstall { ef: 100, tau: 0.9, window: 50 },
        ..base.clone()
    };
    spec(
        "e-ablate",
        GenDataConfig { count: 4000, dim: 32, seed: 42, normalize: false },
        BuildParams { m: 16, ef_construction: 100, seed: 7 },
        vec![
            NamedRun { name: "fcfs_ann_nocache".into(), config: no_cache },
            NamedRun { name: "fcfs_ann_cache".into(), config: base },
            NamedRun { name: "priority".into(), config: priority },
            NamedRun { name: "priority_nonstall".into(), config: nonstall },
        ],
    )
}

/// Search-range sweep: throughput as a function of ef, which trades search
/// latency against result quality (misses trigger query retries). Requests
/// barely outnumber seats, so a slow search leaves a seat idle instead of
/// hiding behind batch-mates: wide searches stretch the makespan directly,
/// while narrow ones pay for retries.
fn range_sweep() -> ExperimentSpec {
    let base = RunConfig {
        retrieval_mode: RetrievalMode::Ann { ef: 200 },
        policy: SchedPolicy::Fcfs,
        top_k: 10,
        engine: EngineConfig {
            max_batch_seqs: 8,
            kv_capacity_blocks: 4096,
            ..EngineConfig::default()
        },
        workload: WorkloadConfig {
            seed: 29,
            num_requests: 10,
            arrival: Arrival::Offline,
            retrievals_per_request: ClampedNormal::new(3.0, 1.0, 1, 5),
            segment_tokens: ClampedNormal::new(80.0, 20.0, 20, 200),
            doc_tokens: 200,
            query_noise: 0.15,
            retry_cap: 3,
        },
        per_candidate_cost: 1e-3,
        enn_cost: None,
    };
    let runs = [10u32, 50, 200, 1000, 5000]
        .into_iter()
        .map(|ef| NamedRun {
            name: format!("ef{ef}"),
            config: RunConfig { retrieval_mode: RetrievalMode::Ann { ef }, ..base.clone() },
        })
        .collect();
    spec(
        "e-range",
        GenDataConfig { count: 8000, dim: 32, seed: 42, normalize: false },
        BuildParams { m: 16, ef_construction: 100, seed: 7 },
        runs,
    )
}

/// Retrieval-cost magnification: sweep the per-step search cost over one
/// decade and compare end-to-end latency against the additive prediction.
/// The `cost_free` run pins the retrieval-free generation time. Arrivals are
/// Poisson near saturation, where extra retrieval time compounds through the
/// queue instead of adding up: sojourn times grow faster than the search
/// itself, and the pileup evicts cached prefixes.
fn cost_magnification() -> ExperimentSpec {
    let base = RunConfig {
        retrieval_mode: RetrievalMode::Ann { ef: 100 },
        policy: SchedPolicy::Fcfs,
        top_k: 5,
        engine: EngineConfig {
            prefill_cost: 2e-4,
            decode_cost: 1e-3,
            max_batch_seqs: 8,
            kv_capacity_blocks: 1024,
            ..EngineConfig::default()
        },
        workload: WorkloadConfig {
            seed: 17,
            num_requests: 0,
            arrival: Arrival::Poisson { rate: 1.5, duration: 40.0 },
            retrievals_per_request: ClampedNormal::new(2.0, 1.0, 1, 4),
            segment_tokens: ClampedNormal::new(30.0, 10.0, 10, 80),
            doc_tokens: 200,
            query_noise: 0.05,
            retry_cap: 3,
        },
        per_candidate_cost: 1e-3,
        enn_cost: None,
    };
    let mut runs = vec![NamedRun {
        name: "cost_free".into(),
        config: RunConfig { per_candidate_cost: 1e-12, ..base.clone() },
    }];
    for (name, cost) in [
        ("cost_1ms", 1e-3),
        ("cost_2ms", 2e-3),
        ("cost_4ms", 4e-3),
        ("cost_7ms", 7e-3),
        ("cost_10ms", 1e-2),
    ] {
        runs.push(NamedRun {
            name: name.into(),
            config: RunConfig { per_candidate_cost: cost, ..base.clone() },
        });
    }
    spec(
        "e-magnify",
        GenDataConfig { count: 4000, dim: 32, seed: 42, normalize: false },
        BuildParams { m: 16, ef_construction: 100, seed: 7 },
        runs,
    )
}

/// Online load sweep: Poisson arrivals at 1..=6 requests/s over a fixed
/// window. Completions are counted inside the window; later ones appear
/// only in the pending ratio.
fn online_rates() -> ExperimentSpec {
    let base = RunConfig {
        retrieval_mode: RetrievalMode::AnnNonstall { ef: 100, tau: 0.9, window: 50 },
        policy: SchedPolicy::Priority { groups: 6 },
        top_k: 5,
        engine: EngineConfig {
            max_batch_seqs: 8,
            kv_capacity_blocks: 2048,
            ..EngineConfig::default()
        },
        workload: WorkloadConfig {
            seed: 19,
            num_requests: 0,
            arrival: Arrival::Poisson { rate: 1.0, duration: 60.0 },
            retrievals_per_request: ClampedNormal::new(2.0, 1.0, 0, 4),
            segment_tokens: ClampedNormal::new(60.0, 20.0, 10, 150),
            doc_tokens: 200,
            query_noise: 0.05,
            retry_cap: 3,
        },
        per_candidate_cost: 1e-4,
        enn_cost: None,
    };
    let runs = (1..=6)
        .map(|r| NamedRun {
            name: format!("rate{r}"),
            config: RunConfig {
                workload: WorkloadConfig {
                    arrival: Arrival::Poisson { rate: r as f64, duration: 60.0 },
                    ..base.workload.clone()
                },
                ..base.clone()
            },
        })
        .collect();
    spec(
        "e-online",
        GenDataConfig { count: 2000, dim: 16, seed: 42, normalize: false },
        BuildParams { m: 16, ef_construction: 100, seed: 7 },
        runs,
    )
}

/// Per-query maturity profile: one plain graph-search run whose task CSV
/// lists, for every retrieval, the maturity step against the natural stop
/// and the recall at both cuts.
fn maturity_profile() -> ExperimentSpec {
    let config = RunConfig {
        retrieval_mode: RetrievalMode::Ann { ef: 200 },
        policy: SchedPolicy::Fcfs,
        top_k: 10,
        engine: EngineConfig {
            max_batch_seqs: 8,
            kv_capacity_blocks: 4096,
            ..EngineConfig::default()
        },
        workload: WorkloadConfig {
            seed: 23,
            num_requests: 24,
            arrival: Arrival::Offline,
            retrievals_per_request: ClampedNormal::new(3.0, 1.0, 1, 5),
            segment_tokens: ClampedNormal::new(80.0, 20.0, 20, 200),
            doc_tokens: 200,
            query_noise: 0.1,
            retry_cap: 3,
        },
        per_candidate_cost: 1e-4,
        enn_cost: None,
    };
    spec(
        "e-maturity",
        GenDataConfig { count: 8000, dim: 32, seed: 42, normalize: false },
        BuildParams { m: 16, ef_construction: 100, seed: 7 },
        vec![NamedRun { name: "maturity_profile".into(), config }],
    )
}
