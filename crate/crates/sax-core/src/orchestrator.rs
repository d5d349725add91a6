//! The serving loop: arrivals in, scheduler-ordered engine iterations,
//! asynchronous (simulated-time) retrieval tasks with optional
//! readiness-gated early termination, and sequence resumption.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::dataset::Dataset;
use crate::ann::hnsw::HnswIndex;
use crate::ann::search::{
    search_natural, SearchParams, SearchTrace, DEFAULT_EMA_WINDOW, DEFAULT_MATURITY_TAU,
};
use crate::ann::recall;
use crate::engine::{EngineSim, IterationReport};
use crate::error::{Result, SaxError};
use crate::metrics::{pending_ratio, percentile, MetricsSummary};
use crate::scheduler::{order_batch, SchedPolicy};
use crate::workload::{
    generate_workload, retrieval_query, retry_segment, Arrival, RequestTrace, SegmentAction,
    WorkloadConfig,
};

/// Simulated seconds of retrieval latency per search expansion step.
pub const DEFAULT_PER_CANDIDATE_COST: f64 = 1e-4;
/// Exact-scan cost per dataset point when `enn_cost` is not set.
pub const DEFAULT_ENN_COST_PER_POINT: f64 = 5e-6;

fn default_tau() -> f64 {
    DEFAULT_MATURITY_TAU
}

fn default_window() -> u32 {
    DEFAULT_EMA_WINDOW as u32
}

/// How retrieval segments are served.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum RetrievalMode {
    /// Exact scan at a fixed modeled cost; recall is 1 by construction.
    #[serde(rename = "ENN")]
    Enn,
    /// Graph search to its natural stop.
    #[serde(rename = "ANN")]
    Ann { ef: u32 },
    /// Graph search that may be cut short once its quality signal matures
    /// and the engine is ready to take the sequence back.
    #[serde(rename = "ANN_nonstall")]
    AnnNonstall {
        ef: u32,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_window")]
        window: u32,
    },
}

impl RetrievalMode {
    pub fn label(&self) -> &'static str {
        match self {
            RetrievalMode::Enn => "enn",
            RetrievalMode::Ann { .. } => "ann",
            RetrievalMode::AnnNonstall { .. } => "ann_nonstall",
        }
    }

    pub fn ef(&self) -> Option<u32> {
        match self {
            RetrievalMode::Enn => None,
            RetrievalMode::Ann { ef } | RetrievalMode::AnnNonstall { ef, .. } => Some(*ef),
        }
    }

    fn is_nonstall(&self) -> bool {
        matches!(self, RetrievalMode::AnnNonstall { .. })
    }
}

/// Full configuration of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub retrieval_mode: RetrievalMode,
    pub policy: SchedPolicy,
    /// Documents delivered per retrieval.
    pub top_k: u32,
    pub engine: crate::engine::EngineConfig,
    pub workload: WorkloadConfig,
    /// Simulated seconds per search step.
    pub per_candidate_cost: f64,
    /// Fixed exact-scan latency; defaults to dataset size times
    /// [`DEFAULT_ENN_COST_PER_POINT`].
    pub enn_cost: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            retrieval_mode: RetrievalMode::Ann { ef: 200 },
            policy: SchedPolicy::Fcfs,
            top_k: 5,
            engine: crate::engine::EngineConfig::default(),
            workload: WorkloadConfig::default(),
            per_candidate_cost: DEFAULT_PER_CANDIDATE_COST,
            enn_cost: None,
        }
    }
}

impl RunConfig {
    /// Search parameters for the configured mode; None for exact scan.
    pub fn search_params(&self) -> Option<SearchParams> {
        match self.retrieval_mode {
            RetrievalMode::Enn => None,
            RetrievalMode::Ann { ef } => Some(SearchParams {
                ef: ef as usize,
                k: self.top_k as usize,
                ..SearchParams::default()
            }),
            RetrievalMode::AnnNonstall { ef, tau, window } => Some(SearchParams {
                ef: ef as usize,
                k: self.top_k as usize,
                ema_window: window as usize,
                tau,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(SaxError::config("top_k must be at least 1"));
        }
        if !(self.per_candidate_cost > 0.0 && self.per_candidate_cost.is_finite()) {
            return Err(SaxError::config("per_candidate_cost must be positive"));
        }
        if let Some(c) = self.enn_cost {
            if !(c > 0.0 && c.is_finite()) {
                return Err(SaxError::config("enn_cost must be positive"));
            }
        }
        if self.top_k as u64 * self.workload.doc_tokens as u64 > u32::MAX as u64 / 4 {
            return Err(SaxError::config("top_k x doc_tokens is implausibly large"));
        }
        if let Some(params) = self.search_params() {
            params.validate()?;
        }
        self.engine.validate()?;
        self.workload.validate()
    }
}

/// One simulated retrieval in flight.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub request_id: u64,
    /// Dataset point the query was perturbed from; retries aim at it again.
    pub query_point: u32,
    pub sim_start: f64,
    pub natural_finish_time: f64,
    /// When the quality signal matured, if it did (readiness-gated modes).
    pub maturity_time: Option<f64>,
    /// Current delivery time: the natural finish, or the early-stop time.
    pub finish_time: f64,
    pub terminated_early: bool,
    /// Step whose results are delivered.
    pub result_cut: usize,
    pub natural_stop_step: usize,
    pub maturity_step: Option<usize>,
    /// Brute-force top-k, for recall and the retry success test.
    pub oracle: Vec<(u32, f64)>,
    /// Full search trace; absent in exact-scan mode.
    pub trace: Option<SearchTrace>,
}

impl RetrievalTask {
    /// Results handed to the request at delivery.
    pub fn delivered(&self) -> &[(u32, f64)] {
        match &self.trace {
            None => &self.oracle,
            Some(trace) => {
                if self.terminated_early {
                    trace.maturity_topk.as_ref().expect("early stop implies maturity")
                } else {
                    &trace.final_topk
                }
            }
        }
    }
}

/// Per-retrieval outcome row, one per delivered task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskRecord {
    pub request_id: u64,
    pub sim_start: f64,
    pub finish_time: f64,
    /// Simulated retrieval duration.
    pub latency: f64,
    pub early: bool,
    pub result_cut: usize,
    pub natural_stop_step: usize,
    pub maturity_step: Option<usize>,
    /// Recall of what was actually delivered.
    pub recall: f64,
    pub recall_natural: f64,
    pub recall_at_maturity: Option<f64>,
}

/// The run's event log, one JSON line per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Arrival { t: f64, id: u64 },
    Admit { t: f64, id: u64 },
    Iter { t: f64, latency: f64, computed: u64, decoded: u64 },
    RetrieveStart { t: f64, id: u64 },
    /// Logged when results are handed over; `finished` is the task's
    /// simulated completion time (≤ `t`).
    RetrieveEnd { t: f64, id: u64, finished: f64, early: bool, recall: f64 },
    EarlyStop { t: f64, id: u64, step: u64 },
    Resume { t: f64, id: u64 },
    Done { t: f64, id: u64, latency: f64 },
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: MetricsSummary,
    pub events: Vec<Event>,
    pub iterations: Vec<IterationReport>,
    pub tasks: Vec<TaskRecord>,
}

/// End-to-end latency a retrieval-blind serving model would predict:
/// retrieval-free time plus one mean retrieval per round.
pub fn naive_rag_latency(t_e2e_0: f64, mean_ret: f64, mean_count: f64) -> f64 {
    t_e2e_0 + mean_ret * mean_count
}

/// Recomputes the stall ratio from an event log alone. A request stalls when
/// some resumption's wait — admission time minus the retrieval's finish time —
/// exceeds the latency of the iteration that admitted it. The ratio is
/// stalled requests over resumed requests, zero when nothing resumed.
pub fn stall_accounting(events: &[Event]) -> f64 {
    let mut finish: BTreeMap<u64, f64> = BTreeMap::new();
    let mut pending: Vec<(u64, f64)> = Vec::new();
    let mut resumed: BTreeSet<u64> = BTreeSet::new();
    let mut stalled: BTreeSet<u64> = BTreeSet::new();
    for e in events {
        match e {
            Event::RetrieveEnd { id, finished, .. } => {
                finish.insert(*id, *finished);
            }
            Event::Resume { id, .. } => {
                resumed.insert(*id);
            }
            Event::Admit { t, id } => {
                if let Some(f) = finish.remove(id) {
                    pending.push((*id, *t - f));
                }
            }
            Event::Iter { latency, .. } => {
                // Admissions are logged just before the iteration that made
                // them, so this latency is the admitting iteration's.
                for (id, gap) in pending.drain(..) {
                    if gap > *latency {
                        stalled.insert(id);
                    }
                }
            }
            _ => {}
        }
    }
    if resumed.is_empty() {
        0.0
    } else {
        stalled.len() as f64 / resumed.len() as f64
    }
}

/// True when the next iteration could serve one more resumed sequence without
/// displacing anything: a seat, token budget, and free cache blocks all remain
/// after every currently waiting sequence is admitted, so the resumption would
/// neither queue nor evict. `resume_tokens` is the new-token cost a resumption
/// would add (its appended documents).
fn engine_ready(engine: &EngineSim, now: f64, resume_tokens: u64) -> bool {
    let cfg = engine.config();
    let waiting = engine.waiting_inputs(now);
    if engine.running_ids().len() + waiting.len() >= cfg.max_batch_seqs as usize {
        return false;
    }
    let queued: u64 = waiting
        .iter()
        .map(|w| engine.peek_computed(w.id).unwrap_or(0) as u64)
        .sum();
    let committed = engine.running_ids().len() as u64 + queued;
    if committed + resume_tokens > cfg.max_batch_tokens as u64 {
        return false;
    }
    let free_blocks = cfg.kv_capacity_blocks.saturating_sub(engine.used_blocks());
    (queued + resume_tokens).div_ceil(cfg.block_size as u64) <= free_blocks
}

fn validate_traces(traces: &[RequestTrace], ds: &Dataset) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut prev_arrival = f64::NEG_INFINITY;
    for tr in traces {
        if !seen.insert(tr.id) {
            return Err(SaxError::config(format!("duplicate request id {}", tr.id)));
        }
        if !(tr.arrival_time.is_finite() && tr.arrival_time >= 0.0) {
            return Err(SaxError::config(format!("request {}: bad arrival time", tr.id)));
        }
        if tr.arrival_time < prev_arrival {
            return Err(SaxError::config("traces must be sorted by arrival time"));
        }
        prev_arrival = tr.arrival_time;
        if tr.segments.is_empty() {
            return Err(SaxError::config(format!("request {} has no segments", tr.id)));
        }
        for (i, seg) in tr.segments.iter().enumerate() {
            let last = i + 1 == tr.segments.len();
            match seg.action {
                SegmentAction::Answer if !last => {
                    return Err(SaxError::config(format!(
                        "request {}: answer segment before the end",
                        tr.id
                    )));
                }
                SegmentAction::Retrieve { query_point, .. } => {
                    if last {
                        return Err(SaxError::config(format!(
                            "request {}: trailing retrieve segment",
                            tr.id
                        )));
                    }
                    if query_point as usize >= ds.len() {
                        return Err(SaxError::config(format!(
                            "request {}: query point {} outside dataset",
                            tr.id, query_point
                        )));
                    }
                }
                SegmentAction::Answer => {}
            }
        }
    }
    Ok(())
}

/// Script progress for one request: its (growing) segment list and the
/// retry budget consumed so far.
struct Script {
    segments: Vec<crate::workload::Segment>,
    pos: usize,
    extra_used: u32,
    max_extra: u32,
}

struct LaunchRequest {
    id: u64,
    query_point: u32,
    noise_seed: u64,
}

/// Runs the full simulation over pre-generated request traces.
pub fn run(
    cfg: &RunConfig,
    ds: &Dataset,
    index: &HnswIndex,
    traces: &[RequestTrace],
    ann_workers: usize,
) -> Result<RunOutput> {
    cfg.validate()?;
    if index.len() != ds.len() || index.dim() != ds.dim() {
        return Err(SaxError::config("index does not match the dataset"));
    }
    if cfg.top_k as usize > ds.len() {
        return Err(SaxError::config("top_k exceeds the dataset size"));
    }
    validate_traces(traces, ds)?;
    let params = cfg.search_params();
    let enn_cost = cfg
        .enn_cost
        .unwrap_or(ds.len() as f64 * DEFAULT_ENN_COST_PER_POINT);
    let pool = match ann_workers {
        0 | 1 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SaxError::config(format!("search worker pool: {e}")))?,
        ),
    };
    let (online_window, is_online) = match cfg.workload.arrival {
        Arrival::Offline => (f64::INFINITY, false),
        Arrival::Poisson { duration, .. } => (duration, true),
    };

    let mut engine = EngineSim::new(cfg.engine.clone())?;
    let mut events: Vec<Event> = Vec::new();
    let mut iterations: Vec<IterationReport> = Vec::new();
    let mut task_records: Vec<TaskRecord> = Vec::new();
    let mut tasks: BTreeMap<u64, RetrievalTask> = BTreeMap::new();
    let mut scripts: BTreeMap<u64, Script> = BTreeMap::new();
    let mut awaiting_admission: BTreeMap<u64, f64> = BTreeMap::new();
    let mut resumed: BTreeSet<u64> = BTreeSet::new();
    let mut stalled: BTreeSet<u64> = BTreeSet::new();
    let mut dones: Vec<(u64, f64, f64)> = Vec::new();
    let mut next_arrival = 0usize;

    // Materialize queries, run searches (on the pool when configured), and
    // build tasks; output order is fixed by the input order, so results
    // are identical for any worker count.
    let launch = |batch: &[LaunchRequest], sim_start: f64| -> Result<Vec<RetrievalTask>> {
        let one = |req: &LaunchRequest| -> Result<RetrievalTask> {
            let query = retrieval_query(ds, req.query_point, req.noise_seed, cfg.workload.query_noise)?;
            let oracle = ds.brute_force_topk(&query, cfg.top_k as usize)?;
            match &params {
                None => Ok(RetrievalTask {
                    request_id: req.id,
                    query_point: req.query_point,
                    sim_start,
                    natural_finish_time: sim_start + enn_cost,
                    maturity_time: None,
                    finish_time: sim_start + enn_cost,
                    terminated_early: false,
                    result_cut: 0,
                    natural_stop_step: 0,
                    maturity_step: None,
                    oracle,
                    trace: None,
                }),
                Some(params) => {
                    let trace = search_natural(index, ds, &query, params)?;
                    let natural_finish_time =
                        sim_start + trace.natural_stop_step as f64 * cfg.per_candidate_cost;
                    let maturity_time = if cfg.retrieval_mode.is_nonstall() {
                        trace
                            .maturity_step
                            .map(|s| sim_start + s as f64 * cfg.per_candidate_cost)
                    } else {
                        None
                    };
                    Ok(RetrievalTask {
                        request_id: req.id,
                        query_point: req.query_point,
                        sim_start,
                        natural_finish_time,
                        maturity_time,
                        finish_time: natural_finish_time,
                        terminated_early: false,
                        result_cut: trace.natural_stop_step,
                        natural_stop_step: trace.natural_stop_step,
                        maturity_step: trace.maturity_step,
                        oracle,
                        trace: Some(trace),
                    })
                }
            }
        };
        match &pool {
            Some(p) => p.install(|| batch.par_iter().map(one).collect()),
            None => batch.iter().map(one).collect(),
        }
    };

    loop {
        let now = engine.now();
        if is_online && now >= online_window {
            break;
        }
        if !is_online && dones.len() == traces.len() {
            break;
        }

        // 1. Arrivals due by now.
        while next_arrival < traces.len() && traces[next_arrival].arrival_time <= now {
            let tr = &traces[next_arrival];
            engine.add_sequence(tr.id, tr.arrival_time, 0, tr.segments[0].decode_tokens)?;
            scripts.insert(
                tr.id,
                Script {
                    segments: tr.segments.clone(),
                    pos: 0,
                    extra_used: 0,
                    max_extra: tr.max_extra_retrievals,
                },
            );
            events.push(Event::Arrival { t: tr.arrival_time, id: tr.id });
            next_arrival += 1;
        }

        // 2. Readiness-gated early termination of matured searches.
        let resume_tokens = (cfg.top_k as u64) * (cfg.workload.doc_tokens as u64);
        if cfg.retrieval_mode.is_nonstall() && engine_ready(&engine, now, resume_tokens) {
            for (id, task) in tasks.iter_mut() {
                if task.terminated_early {
                    continue;
                }
                if let Some(mt) = task.maturity_time {
                    if mt <= now && now < task.natural_finish_time {
                        task.terminated_early = true;
                        task.finish_time = now;
                        task.result_cut = task.maturity_step.expect("maturity time implies step");
                        events.push(Event::EarlyStop {
                            t: now,
                            id: *id,
                            step: task.result_cut as u64,
                        });
                    }
                }
            }
        }

        // 3. Deliver finished retrievals in (finish, id) order.
        let mut due: Vec<u64> = tasks
            .iter()
            .filter(|(_, task)| task.finish_time <= now)
            .map(|(id, _)| *id)
            .collect();
        due.sort_by(|a, b| {
            tasks[a]
                .finish_time
                .total_cmp(&tasks[b].finish_time)
                .then(a.cmp(b))
        });
        for id in due {
            let task = tasks.remove(&id).expect("due task exists");
            let oracle_ids: Vec<u32> = task.oracle.iter().map(|(i, _)| *i).collect();
            let delivered_ids: Vec<u32> = task.delivered().iter().map(|(i, _)| *i).collect();
            let task_recall = recall(&delivered_ids, &oracle_ids);
            let (recall_natural, recall_at_maturity) = match &task.trace {
                None => (1.0, None),
                Some(trace) => {
                    let nat: Vec<u32> = trace.final_topk.iter().map(|(i, _)| *i).collect();
                    let mat = trace.maturity_topk.as_ref().map(|topk| {
                        let ids: Vec<u32> = topk.iter().map(|(i, _)| *i).collect();
                        recall(&ids, &oracle_ids)
                    });
                    (recall(&nat, &oracle_ids), mat)
                }
            };
            let docs_tokens = cfg.top_k * cfg.workload.doc_tokens;
            engine.complete_retrieval(id, docs_tokens)?;
            let script = scripts.get_mut(&id).expect("script exists");
            let success = delivered_ids.contains(&task.oracle[0].0);
            if !success && script.extra_used < script.max_extra {
                script.extra_used += 1;
                let retry = retry_segment(&cfg.workload, id, script.extra_used, task.query_point);
                script.segments.insert(script.pos + 1, retry);
            }
            script.pos += 1;
            engine.begin_segment(id, script.segments[script.pos].decode_tokens)?;
            awaiting_admission.insert(id, task.finish_time);
            resumed.insert(id);
            events.push(Event::RetrieveEnd {
                t: now,
                id,
                finished: task.finish_time,
                early: task.terminated_early,
                recall: task_recall,
            });
            events.push(Event::Resume { t: now, id });
            task_records.push(TaskRecord {
                request_id: id,
                sim_start: task.sim_start,
                finish_time: task.finish_time,
                latency: task.finish_time - task.sim_start,
                early: task.terminated_early,
                result_cut: task.result_cut,
                natural_stop_step: task.natural_stop_step,
                maturity_step: task.maturity_step,
                recall: task_recall,
                recall_natural,
                recall_at_maturity,
            });
        }

        // 4. One engine iteration, or a clock jump when nothing can run.
        let waiting = engine.waiting_inputs(now);
        if waiting.is_empty() && engine.running_ids().is_empty() {
            let mut t_next = f64::INFINITY;
            if next_arrival < traces.len() {
                t_next = t_next.min(traces[next_arrival].arrival_time);
            }
            for task in tasks.values() {
                t_next = t_next.min(task.finish_time);
                if let Some(mt) = task.maturity_time {
                    if !task.terminated_early && mt > now {
                        t_next = t_next.min(mt);
                    }
                }
            }
            if is_online {
                t_next = t_next.min(online_window);
            }
            if t_next.is_infinite() {
                return Err(SaxError::invalid_state(
                    "simulation idle with requests outstanding",
                ));
            }
            engine.advance_to(t_next);
            continue;
        }

        let ordered: Vec<u64> = order_batch(&waiting, cfg.policy)
            .iter()
            .map(|s| s.id)
            .collect();
        let outcome = engine.admit_and_run_iteration(&ordered)?;
        let report = outcome.report;
        iterations.push(report);
        for &id in &outcome.admitted {
            events.push(Event::Admit { t: report.time, id });
        }
        events.push(Event::Iter {
            t: report.time,
            latency: report.latency,
            computed: report.prefilled_computed,
            decoded: report.decoded_seqs,
        });
        for &id in &outcome.admitted {
            if let Some(finish) = awaiting_admission.remove(&id) {
                // Stalled: the wait from retrieval finish to admission
                // exceeded the latency of the iteration that admitted it.
                if report.time - finish > report.latency {
                    stalled.insert(id);
                    engine.set_stalled(id)?;
                }
            }
        }
        if outcome.admitted.is_empty()
            && report.decoded_seqs == 0
            && outcome.preempted.is_empty()
            && tasks.is_empty()
            && next_arrival == traces.len()
            && !waiting.is_empty()
        {
            return Err(SaxError::config(
                "kv capacity cannot admit any waiting sequence; increase kv_capacity_blocks",
            ));
        }

        // Route finished segments at the iteration's end time.
        let t_end = engine.now();
        let mut batch: Vec<LaunchRequest> = Vec::new();
        for id in outcome.segment_done {
            let script = scripts.get(&id).expect("script exists");
            match script.segments[script.pos].action {
                SegmentAction::Retrieve { query_point, noise_seed } => {
                    engine.start_retrieval(id)?;
                    events.push(Event::RetrieveStart { t: t_end, id });
                    batch.push(LaunchRequest { id, query_point, noise_seed });
                }
                SegmentAction::Answer => {
                    let t_arr = engine.seq(id).expect("sequence exists").t_arr_initial;
                    engine.finish(id)?;
                    let latency = t_end - t_arr;
                    dones.push((id, t_end, latency));
                    events.push(Event::Done { t: t_end, id, latency });
                }
            }
        }
        if !batch.is_empty() {
            for task in launch(&batch, t_end)? {
                tasks.insert(task.request_id, task);
            }
        }
    }

    // Summary. Online runs count only completions inside the window.
    let initiated = next_arrival as u64;
    let duration = if is_online {
        online_window
    } else {
        dones.iter().map(|(_, t, _)| *t).fold(0.0, f64::max)
    };
    let completed: Vec<&(u64, f64, f64)> = dones
        .iter()
        .filter(|(_, t, _)| !is_online || *t <= online_window)
        .collect();
    let latencies: Vec<f64> = completed.iter().map(|(_, _, l)| *l).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let pct = |xs: &[f64], p: f64| {
        if xs.is_empty() {
            0.0
        } else {
            percentile(xs, p).expect("nonempty")
        }
    };
    let retrieval_counts: Vec<f64> = completed
        .iter()
        .map(|(id, _, _)| engine.seq(*id).expect("completed sequence").retrieval_count as f64)
        .collect();
    let task_latencies: Vec<f64> = task_records.iter().map(|t| t.latency).collect();
    let recalls: Vec<f64> = task_records.iter().map(|t| t.recall).collect();
    let early_stop_fraction = if task_records.is_empty() {
        0.0
    } else {
        task_records.iter().filter(|t| t.early).count() as f64 / task_records.len() as f64
    };
    let stall_ratio = if resumed.is_empty() {
        0.0
    } else {
        stalled.len() as f64 / resumed.len() as f64
    };
    let per_second = |v: f64| if duration > 0.0 { v / duration } else { 0.0 };
    let summary = MetricsSummary {
        requests_completed: completed.len() as u64,
        duration,
        throughput: per_second(completed.len() as f64),
        token_throughput: per_second(
            (engine.total_decoded_tokens() + engine.total_computed_prefill()) as f64,
        ),
        mean_latency: mean(&latencies),
        p50: pct(&latencies, 50.0),
        p99: pct(&latencies, 99.0),
        prefix_hit_rate: engine.hit_rate(),
        pending_ratio: pending_ratio(initiated, completed.len() as u64),
        stall_ratio,
        mean_retrieval_count: mean(&retrieval_counts),
        mean_retrieval_latency: mean(&task_latencies),
        early_stop_fraction,
        mean_recall: mean(&recalls),
    };
    Ok(RunOutput {
        summary,
        events,
        iterations,
        tasks: task_records,
    })
}

/// Convenience wrapper: generate the workload from the run's own config,
/// then simulate it.
pub fn run_generated(
    cfg: &RunConfig,
    ds: &Dataset,
    index: &HnswIndex,
    ann_workers: usize,
) -> Result<RunOutput> {
    let traces = generate_workload(&cfg.workload, ds)?;
    run(cfg, ds, index, &traces, ann_workers)
}
