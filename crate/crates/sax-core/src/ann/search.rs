//! Stepwise beam search over the level-0 graph with per-step quality
//! tracking, so callers can observe convergence and cut a search short.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::ann::dataset::{sq_dist, Dataset};
use crate::ann::hnsw::{HnswIndex, Scored};
use crate::error::{Result, SaxError};

/// Smoothing window for the per-step quality signal. The full-scale setting
/// of 500 observations pairs with beams two orders of magnitude wider; at
/// the desk-scale default beam (`ef = 200`) the window scales down to 50.
pub const DEFAULT_EMA_WINDOW: usize = 50;
/// Smoothed-quality threshold above which a search counts as mature.
pub const DEFAULT_MATURITY_TAU: f64 = 0.9;

/// Query-time parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// Beam width: how many best-so-far results the search retains.
    pub ef: usize,
    /// How many results the caller wants.
    pub k: usize,
    /// Window for the exponential moving average over step quality.
    pub ema_window: usize,
    /// Maturity threshold applied to the smoothed quality signal.
    pub tau: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            ef: crate::ann::hnsw::DEFAULT_EF_SEARCH,
            k: 10,
            ema_window: DEFAULT_EMA_WINDOW,
            tau: DEFAULT_MATURITY_TAU,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(SaxError::invalid_input("k must be positive"));
        }
        if self.ef < self.k {
            return Err(SaxError::invalid_input(format!(
                "ef = {} must be at least k = {}",
                self.ef, self.k
            )));
        }
        if self.ema_window == 0 {
            return Err(SaxError::invalid_input("ema_window must be positive"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SaxError::invalid_input("tau must be positive and finite"));
        }
        Ok(())
    }
}

/// One expansion step of a search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Step counter, starting at 1 for the first expansion.
    pub t: usize,
    /// Distance of the best candidate discovered during this step; when a
    /// step discovers nothing new this repeats the previous worst retained
    /// distance so the quality stream stays dense.
    pub d_t: f64,
    /// Best retained distance after the step.
    pub d_best: f64,
    /// Worst retained distance after the step.
    pub d_worst: f64,
    /// Relative quality of the newest discovery, see [`rq`].
    pub rq: f64,
    /// Smoothed quality signal after this step.
    pub ema: f64,
    /// Cumulative count of nodes visited so far.
    pub visited: usize,
}

/// In-progress level-0 search. Create with [`search_init`], advance with
/// [`search_step`].
#[derive(Debug, Clone)]
pub struct SearchState {
    query: Vec<f32>,
    ef: usize,
    k: usize,
    ema_window: usize,
    t: usize,
    visited: Vec<bool>,
    visited_count: usize,
    candidates: BinaryHeap<Reverse<Scored>>,
    results: BinaryHeap<Scored>,
    best_dist: f64,
    ema: Option<f64>,
    finished: bool,
}

impl SearchState {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn visited_count(&self) -> usize {
        self.visited_count
    }

    pub fn ema(&self) -> Option<f64> {
        self.ema
    }

    /// Current best `k` retained results, ascending by `(distance, id)`.
    pub fn topk(&self) -> Vec<(u32, f64)> {
        let mut all: Vec<Scored> = self.results.iter().copied().collect();
        all.sort();
        all.truncate(self.k);
        all.into_iter().map(|s| (s.id, s.dist)).collect()
    }
}

/// Relative quality of a discovery at distance `d_t` against the current
/// result band `[d_best, d_worst]`. Zero means as good as the best retained
/// result; one means no better than the worst. Values above one are kept
/// as-is. A collapsed band reads as saturated (1.0).
pub fn rq(d_t: f64, d_best: f64, d_worst: f64) -> f64 {
    debug_assert!(d_best <= d_worst);
    if d_worst <= d_best {
        1.0
    } else {
        (d_t - d_best) / (d_worst - d_best)
    }
}

/// Exponential moving average with the conventional `alpha = 2 / (window + 1)`
/// weighting; the first observation seeds the average unchanged.
pub fn ema_update(prev: Option<f64>, value: f64, window: usize) -> f64 {
    debug_assert!(window >= 1);
    match prev {
        None => value,
        Some(p) => {
            let alpha = 2.0 / (window as f64 + 1.0);
            alpha * value + (1.0 - alpha) * p
        }
    }
}

/// First step index whose smoothed quality reached `tau`, if any.
pub fn maturity_point(records: &[StepRecord], tau: f64) -> Option<usize> {
    records.iter().find(|r| r.ema >= tau).map(|r| r.t)
}

/// Positions a search at the level-0 entry: walks the upper layers greedily
/// (beam width 1) and seeds the beam with the landing node. A single-node
/// index has nothing to expand, so the state starts finished.
///
/// # Errors
///
/// Rejects invalid parameters and a query of the wrong dimension.
pub fn search_init(
    index: &HnswIndex,
    ds: &Dataset,
    query: &[f32],
    params: &SearchParams,
) -> Result<SearchState> {
    params.validate()?;
    if query.len() != index.dim() {
        return Err(SaxError::invalid_input(format!(
            "query dim {} does not match index dim {}",
            query.len(),
            index.dim()
        )));
    }
    if ds.len() != index.len() || ds.dim() != index.dim() {
        return Err(SaxError::invalid_input(
            "dataset does not match the index it was built from",
        ));
    }
    let mut cur = index.entry_point();
    let mut cur_dist = sq_dist(query, ds.vector(cur));
    for level in (1..=index.max_level()).rev() {
        let (c, d) = index.greedy_closest(ds, query, cur, cur_dist, level);
        cur = c;
        cur_dist = d;
    }
    let start = Scored {
        dist: cur_dist,
        id: cur,
    };
    let mut visited = vec![false; index.len()];
    visited[cur as usize] = true;
    let mut candidates = BinaryHeap::new();
    candidates.push(Reverse(start));
    let mut results = BinaryHeap::new();
    results.push(start);
    Ok(SearchState {
        query: query.to_vec(),
        ef: params.ef,
        k: params.k,
        ema_window: params.ema_window,
        t: 0,
        visited,
        visited_count: 1,
        candidates,
        results,
        best_dist: cur_dist,
        ema: None,
        finished: index.len() == 1,
    })
}

/// Advances a search by one expansion: pops the closest unexpanded
/// candidate, stops naturally when it cannot improve a full beam, and
/// otherwise visits its unvisited neighbors and records the step.
///
/// Returns `Ok(None)` on the natural stop (no record is emitted).
///
/// # Errors
///
/// Stepping an already-finished state is an invalid-state error.
pub fn search_step(
    state: &mut SearchState,
    index: &HnswIndex,
    ds: &Dataset,
) -> Result<Option<StepRecord>> {
    if state.finished {
        return Err(SaxError::invalid_state("search already finished"));
    }
    let cand = match state.candidates.pop() {
        Some(Reverse(c)) => c,
        None => {
            state.finished = true;
            return Ok(None);
        }
    };
    let worst_before = state
        .results
        .peek()
        .map(|s| s.dist)
        .expect("results are seeded at init");
    if state.results.len() == state.ef && cand.dist >= worst_before {
        state.finished = true;
        return Ok(None);
    }

    let mut best_new: Option<f64> = None;
    for &nb in index.neighbors(cand.id, 0) {
        if state.visited[nb as usize] {
            continue;
        }
        state.visited[nb as usize] = true;
        state.visited_count += 1;
        let d = sq_dist(&state.query, ds.vector(nb));
        best_new = Some(match best_new {
            Some(b) if b <= d => b,
            _ => d,
        });
        let worst = state
            .results
            .peek()
            .map(|s| s.dist)
            .unwrap_or(f64::INFINITY);
        if state.results.len() < state.ef || d < worst {
            let entry = Scored { dist: d, id: nb };
            state.candidates.push(Reverse(entry));
            state.results.push(entry);
            if state.results.len() > state.ef {
                state.results.pop();
            }
            if d < state.best_dist {
                state.best_dist = d;
            }
        }
    }

    state.t += 1;
    let d_t = best_new.unwrap_or(worst_before);
    let d_best = state.best_dist;
    let d_worst = state
        .results
        .peek()
        .map(|s| s.dist)
        .expect("results never empty");
    let quality = rq(d_t, d_best, d_worst);
    let ema = ema_update(state.ema, quality, state.ema_window);
    state.ema = Some(ema);
    Ok(Some(StepRecord {
        t: state.t,
        d_t,
        d_best,
        d_worst,
        rq: quality,
        ema,
        visited: state.visited_count,
    }))
}

/// Full record of a search run to its natural stop.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    /// One record per expansion step.
    pub records: Vec<StepRecord>,
    /// The step counter at the natural stop.
    pub natural_stop_step: usize,
    /// First step at which the smoothed quality reached `tau`, if any.
    pub maturity_step: Option<usize>,
    /// Top-k at the natural stop, ascending by `(distance, id)`.
    pub final_topk: Vec<(u32, f64)>,
    /// Top-k snapshot taken exactly at `maturity_step`; bit-identical to
    /// replaying the search truncated there.
    pub maturity_topk: Option<Vec<(u32, f64)>>,
}

/// Runs a search to its natural stop, recording every step and the maturity
/// crossing for `params.tau`.
pub fn search_natural(
    index: &HnswIndex,
    ds: &Dataset,
    query: &[f32],
    params: &SearchParams,
) -> Result<SearchTrace> {
    let mut state = search_init(index, ds, query, params)?;
    let mut records = Vec::new();
    let mut maturity_step = None;
    let mut maturity_topk = None;
    while !state.finished() {
        match search_step(&mut state, index, ds)? {
            Some(rec) => {
                if maturity_step.is_none() && rec.ema >= params.tau {
                    maturity_step = Some(rec.t);
                    maturity_topk = Some(state.topk());
                }
                records.push(rec);
            }
            None => break,
        }
    }
    Ok(SearchTrace {
        natural_stop_step: state.t(),
        final_topk: state.topk(),
        records,
        maturity_step,
        maturity_topk,
    })
}

/// Top-k the search would have returned had it stopped after `t_cut` steps.
/// Replays the deterministic search, so the output is bit-identical to a
/// truncated run.
///
/// # Errors
///
/// `t_cut` past the natural stop is an invalid-input error.
pub fn results_at_step(
    index: &HnswIndex,
    ds: &Dataset,
    query: &[f32],
    params: &SearchParams,
    t_cut: usize,
) -> Result<Vec<(u32, f64)>> {
    let mut state = search_init(index, ds, query, params)?;
    while state.t() < t_cut {
        if state.finished() || search_step(&mut state, index, ds)?.is_none() {
            return Err(SaxError::invalid_input(format!(
                "t_cut = {} exceeds the natural stop at step {}",
                t_cut,
                state.t()
            )));
        }
    }
    Ok(state.topk())
}
