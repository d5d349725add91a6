//! End-to-end consistency of a full simulated run: every aggregate the
//! summary reports must be recomputable from the run's own event log and
//! task records, and the whole pipeline must be deterministic.

use sax_core::ann::dataset::Dataset;
use sax_core::ann::hnsw::{build_index, BuildParams, HnswIndex};
use sax_core::engine::EngineConfig;
use sax_core::orchestrator::{run_generated, stall_accounting, Event, RetrievalMode, RunConfig, RunOutput};
use sax_core::scheduler::SchedPolicy;
use sax_core::workload::{Arrival, ClampedNormal, WorkloadConfig};

fn fixture() -> (Dataset, HnswIndex) {
    let ds = Dataset::generate_gaussian(600, 16, 42, false).unwrap();
    let index = build_index(&ds, &BuildParams { m: 8, ef_construction: 60, seed: 7 }).unwrap();
    (ds, index)
}

fn offline_config(mode: RetrievalMode, policy: SchedPolicy) -> RunConfig {
    RunConfig {
        retrieval_mode: mode,
        policy,
        top_k: 4,
        engine: EngineConfig {
            max_batch_seqs: 4,
            kv_capacity_blocks: 256,
            shared_prefix_len: 128,
            ..EngineConfig::default()
        },
        workload: WorkloadConfig {
            seed: 5,
            num_requests: 12,
            arrival: Arrival::Offline,
            retrievals_per_request: ClampedNormal::new(2.0, 1.0, 1, 4),
            segment_tokens: ClampedNormal::new(30.0, 10.0, 10, 60),
            doc_tokens: 100,
            query_noise: 0.1,
            retry_cap: 2,
        },
        per_candidate_cost: 1e-3,
        enn_cost: None,
    }
}

fn relative_eq(a: f64, b: f64) {
    let scale = a.abs().max(b.abs()).max(1e-12);
    assert!(
        (a - b).abs() / scale < 1e-9,
        "aggregate mismatch: {a} vs {b}"
    );
}

/// Replays the event log and task records to recompute every aggregate the
/// summary claims, then checks them against the reported values.
fn check_aggregates(out: &RunOutput) {
    let done: Vec<(f64, f64)> = out
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Done { t, latency, .. } => Some((*t, *latency)),
            _ => None,
        })
        .collect();
    assert_eq!(done.len() as u64, out.summary.requests_completed);
    assert!(!done.is_empty(), "fixture must complete requests");

    let duration = done.iter().map(|(t, _)| *t).fold(0.0, f64::max);
    relative_eq(out.summary.duration, duration);
    relative_eq(
        out.summary.throughput,
        done.len() as f64 / duration,
    );

    let mean_latency = done.iter().map(|(_, l)| *l).sum::<f64>() / done.len() as f64;
    relative_eq(out.summary.mean_latency, mean_latency);

    let mut lats: Vec<f64> = done.iter().map(|(_, l)| *l).collect();
    lats.sort_by(f64::total_cmp);
    assert!(out.summary.p50 >= lats[0] && out.summary.p50 <= lats[lats.len() - 1]);
    assert!(out.summary.p99 >= out.summary.p50);

    let tokens: u64 = out
        .events
        .iter()
        .map(|e| match e {
            Event::Iter { computed, decoded, .. } => computed + decoded,
            _ => 0,
        })
        .sum();
    relative_eq(out.summary.token_throughput, tokens as f64 / duration);

    // The summary's stall ratio is computed while the run happens; the
    // event-log replay must land on exactly the same value.
    relative_eq(out.summary.stall_ratio, stall_accounting(&out.events));

    let tasks = out.tasks.len() as f64;
    relative_eq(
        out.summary.mean_retrieval_count,
        tasks / done.len() as f64,
    );
    relative_eq(
        out.summary.mean_retrieval_latency,
        out.tasks.iter().map(|t| t.latency).sum::<f64>() / tasks,
    );
    relative_eq(
        out.summary.mean_recall,
        out.tasks.iter().map(|t| t.recall).sum::<f64>() / tasks,
    );
    relative_eq(
        out.summary.early_stop_fraction,
        out.tasks.iter().filter(|t| t.early).count() as f64 / tasks,
    );

    assert!((0.0..=1.0).contains(&out.summary.prefix_hit_rate));
    // Offline runs finish every request inside the measured window.
    relative_eq(out.summary.pending_ratio, 0.0);
}

/// Per-request lifecycle order in the event log: arrival, then admission,
/// then completion, with retrieval hand-over never before the simulated
/// finish.
fn check_event_order(out: &RunOutput) {
    use std::collections::BTreeMap;
    let mut arrival: BTreeMap<u64, f64> = BTreeMap::new();
    let mut first_admit: BTreeMap<u64, f64> = BTreeMap::new();
    let mut last_iter = f64::NEG_INFINITY;
    for e in &out.events {
        match e {
            Event::Arrival { t, id } => {
                arrival.insert(*id, *t);
            }
            Event::Admit { t, id } => {
                assert!(*t >= arrival[id], "admitted before arrival");
                first_admit.entry(*id).or_insert(*t);
            }
            Event::Iter { t, latency, .. } => {
                assert!(*t > last_iter, "iteration clock must advance");
                assert!(*latency > 0.0);
                last_iter = *t;
            }
            Event::RetrieveEnd { t, finished, .. } => {
                assert!(finished <= t, "hand-over precedes simulated finish");
            }
            Event::Done { t, id, latency } => {
                assert!(*t >= first_admit[id]);
                relative_eq(*latency, *t - arrival[id]);
            }
            _ => {}
        }
    }
}

#[test]
fn summary_aggregates_match_event_log_replay() {
    let (ds, index) = fixture();
    let cfg = offline_config(RetrievalMode::Ann { ef: 50 }, SchedPolicy::Fcfs);
    let out = run_generated(&cfg, &ds, &index, 1).unwrap();
    check_aggregates(&out);
    check_event_order(&out);
}

#[test]
fn nonstall_priority_run_stays_consistent() {
    let (ds, index) = fixture();
    let cfg = offline_config(
        RetrievalMode::AnnNonstall { ef: 50, tau: 0.9, window: 50 },
        SchedPolicy::Priority { groups: 4 },
    );
    let out = run_generated(&cfg, &ds, &index, 1).unwrap();
    check_aggregates(&out);
    check_event_order(&out);
    // The tasks file must agree with the events about who stopped early.
    let early_events = out
        .events
        .iter()
        .filter(|e| matches!(e, Event::EarlyStop { .. }))
        .count();
    let early_tasks = out.tasks.iter().filter(|t| t.early).count();
    assert_eq!(early_events, early_tasks);
}

#[test]
fn identical_configs_replay_identically() {
    let (ds, index) = fixture();
    let cfg = offline_config(RetrievalMode::Ann { ef: 50 }, SchedPolicy::Fcfs);
    let a = run_generated(&cfg, &ds, &index, 1).unwrap();
    let b = run_generated(&cfg, &ds, &index, 1).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.events, b.events);
    assert_eq!(a.tasks.len(), b.tasks.len());
}
