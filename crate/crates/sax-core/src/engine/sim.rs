//! Iteration-level batched engine model: admission against token, seat,
//! and KV budgets; linear per-iteration cost; continuous decode batching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::kv::{CapacityExhausted, KvCacheModel};
use crate::error::{Result, SaxError};
use crate::scheduler::PriorityInputs;

/// Monotone simulation clock.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0);
        self.now += dt;
    }

    /// Jumps forward to an absolute time; never moves backwards.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// Engine cost model and capacity limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Fixed seconds per iteration.
    pub iter_base: f64,
    /// Seconds per computed prefill token.
    pub prefill_cost: f64,
    /// Seconds per decoding sequence per iteration.
    pub decode_cost: f64,
    /// Per-iteration token budget: computed prefill tokens plus one per
    /// decoding sequence (cached tokens are free).
    pub max_batch_tokens: u32,
    pub max_batch_seqs: u32,
    pub kv_capacity_blocks: u64,
    pub block_size: u32,
    /// System-prompt tokens shared by every request.
    pub shared_prefix_len: u32,
    /// When false, every prefill recomputes from scratch and nothing is
    /// retained once a sequence leaves the running set.
    pub prefix_cache: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            iter_base: 2e-3,
            prefill_cost: 1e-4,
            decode_cost: 5e-3,
            max_batch_tokens: 4096,
            max_batch_seqs: 64,
            kv_capacity_blocks: 4096,
            block_size: 16,
            shared_prefix_len: 512,
            prefix_cache: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iter_base", self.iter_base),
            ("prefill_cost", self.prefill_cost),
            ("decode_cost", self.decode_cost),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SaxError::config(format!("{name} must be positive")));
            }
        }
        if self.max_batch_tokens == 0 || self.max_batch_seqs == 0 {
            return Err(SaxError::config("batch limits must be positive"));
        }
        // Block geometry constraints are enforced when the cache is built.
        KvCacheModel::new(
            self.kv_capacity_blocks,
            self.block_size,
            self.shared_prefix_len,
            self.prefix_cache,
        )
        .map(|_| ())
    }
}

/// Lifecycle of a request inside the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqPhase {
    WaitingPrefill,
    Decoding,
    Retrieving,
    Done,
}

/// Per-request engine state.
#[derive(Debug, Clone)]
pub struct SequenceState {
    pub request_id: u64,
    /// Retrievals completed so far.
    pub retrieval_count: u32,
    /// Tokens in context, shared prefix included.
    pub context_len: u32,
    /// Prefix tokens reused at the most recent prefill.
    pub cached_prefix_len: u32,
    /// Tokens left to decode in the current segment.
    pub remaining_decode: u32,
    pub phase: SeqPhase,
    /// First arrival; anchors total waiting time.
    pub t_arr_initial: f64,
    /// Most recent time the sequence became ready; anchors current
    /// waiting time and resets after each retrieval.
    pub t_arr_current: f64,
    /// Set when a resumption missed the admission it was racing for.
    pub stall_flag: bool,
}

/// One engine iteration, as emitted on the trace stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationReport {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "computed")]
    pub prefilled_computed: u64,
    #[serde(rename = "cached")]
    pub prefilled_cached: u64,
    #[serde(rename = "decoded")]
    pub decoded_seqs: u64,
    #[serde(rename = "evicted")]
    pub evicted_blocks: u64,
    pub latency: f64,
}

/// Everything the orchestrator needs to react to one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub report: IterationReport,
    /// Sequences admitted (prefilled) this iteration, in admission order.
    pub admitted: Vec<u64>,
    /// Decoders bounced back to waiting because their next block could
    /// not be allocated.
    pub preempted: Vec<u64>,
    /// Running sequences whose segment is now fully decoded; the caller
    /// must route each to retrieval or completion before the next
    /// iteration.
    pub segment_done: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct EngineSim {
    cfg: EngineConfig,
    clock: SimClock,
    cache: KvCacheModel,
    seqs: BTreeMap<u64, SequenceState>,
    /// Admission-ordered running set; every member is in `Decoding`.
    running: Vec<u64>,
    hits: u64,
    demands: u64,
    total_decoded_tokens: u64,
    total_computed_prefill: u64,
    iterations: u64,
}

impl EngineSim {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let cache = KvCacheModel::new(
            cfg.kv_capacity_blocks,
            cfg.block_size,
            cfg.shared_prefix_len,
            cfg.prefix_cache,
        )?;
        Ok(EngineSim {
            cfg,
            clock: SimClock::default(),
            cache,
            seqs: BTreeMap::new(),
            running: Vec::new(),
            hits: 0,
            demands: 0,
            total_decoded_tokens: 0,
            total_computed_prefill: 0,
            iterations: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// Clock jump for idle periods; the orchestrator uses it to skip to
    /// the next event.
    pub fn advance_to(&mut self, t: f64) {
        self.clock.advance_to(t);
    }

    pub fn seq(&self, id: u64) -> Option<&SequenceState> {
        self.seqs.get(&id)
    }

    pub fn seqs(&self) -> impl Iterator<Item = &SequenceState> {
        self.seqs.values()
    }

    pub fn running_ids(&self) -> &[u64] {
        &self.running
    }

    pub fn used_blocks(&self) -> u64 {
        self.cache.used_blocks()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn total_decoded_tokens(&self) -> u64 {
        self.total_decoded_tokens
    }

    pub fn total_computed_prefill(&self) -> u64 {
        self.total_computed_prefill
    }

    /// Prefix hits over prefix demands, in tokens; zero before any prefill.
    pub fn hit_rate(&self) -> f64 {
        if self.demands == 0 {
            0.0
        } else {
            self.hits as f64 / self.demands as f64
        }
    }

    /// Registers a new request. Context starts at the shared prefix (plus
    /// any extra prompt tokens) and the first segment's decode budget.
    pub fn add_sequence(
        &mut self,
        id: u64,
        arrival_time: f64,
        prompt_tokens: u32,
        first_decode: u32,
    ) -> Result<()> {
        if self.seqs.contains_key(&id) {
            return Err(SaxError::invalid_input(format!("duplicate sequence id {id}")));
        }
        self.seqs.insert(
            id,
            SequenceState {
                request_id: id,
                retrieval_count: 0,
                context_len: self.cfg.shared_prefix_len + prompt_tokens,
                cached_prefix_len: 0,
                remaining_decode: first_decode,
                phase: SeqPhase::WaitingPrefill,
                t_arr_initial: arrival_time,
                t_arr_current: arrival_time,
                stall_flag: false,
            },
        );
        Ok(())
    }

    fn seq_mut(&mut self, id: u64) -> Result<&mut SequenceState> {
        self.seqs
            .get_mut(&id)
            .ok_or_else(|| SaxError::invalid_input(format!("unknown sequence id {id}")))
    }

    fn expect_phase(seq: &SequenceState, phase: SeqPhase, op: &str) -> Result<()> {
        if seq.phase != phase {
            return Err(SaxError::invalid_state(format!(
                "{op} on sequence {} in phase {:?}",
                seq.request_id, seq.phase
            )));
        }
        Ok(())
    }

    /// Sets the decode budget for the segment a waiting sequence will run
    /// next (at arrival it comes from `add_sequence`).
    pub fn begin_segment(&mut self, id: u64, decode_tokens: u32) -> Result<()> {
        let seq = self.seq_mut(id)?;
        Self::expect_phase(seq, SeqPhase::WaitingPrefill, "begin_segment")?;
        seq.remaining_decode = decode_tokens;
        Ok(())
    }

    /// Moves a fully decoded sequence out of the batch while its retrieval
    /// runs; whole cached blocks stay behind, the partial tail is dropped.
    pub fn start_retrieval(&mut self, id: u64) -> Result<()> {
        let seq = self.seq_mut(id)?;
        Self::expect_phase(seq, SeqPhase::Decoding, "start_retrieval")?;
        let ctx = seq.context_len;
        seq.phase = SeqPhase::Retrieving;
        self.running.retain(|&r| r != id);
        self.cache.release(id, ctx);
        Ok(())
    }

    /// Delivers retrieved documents: the context grows, the retrieval
    /// counter ticks, and the sequence queues for its next prefill with
    /// its current-wait anchor reset to now.
    pub fn complete_retrieval(&mut self, id: u64, docs_tokens: u32) -> Result<()> {
        let now = self.clock.now();
        let seq = self.seq_mut(id)?;
        Self::expect_phase(seq, SeqPhase::Retrieving, "complete_retrieval")?;
        seq.context_len += docs_tokens;
        seq.retrieval_count += 1;
        seq.phase = SeqPhase::WaitingPrefill;
        seq.t_arr_current = now;
        Ok(())
    }

    /// Final answer emitted: the sequence is done and its blocks are freed.
    pub fn finish(&mut self, id: u64) -> Result<()> {
        let seq = self.seq_mut(id)?;
        Self::expect_phase(seq, SeqPhase::Decoding, "finish")?;
        seq.phase = SeqPhase::Done;
        self.running.retain(|&r| r != id);
        self.cache.free_all(id);
        Ok(())
    }

    pub fn set_stalled(&mut self, id: u64) -> Result<()> {
        self.seq_mut(id)?.stall_flag = true;
        Ok(())
    }

    /// Computed-prefill tokens this waiting sequence would need if
    /// admitted right now (no pinning).
    pub fn peek_computed(&self, id: u64) -> Option<u32> {
        let seq = self.seqs.get(&id)?;
        Some(seq.context_len - self.cache.peek_cached_len(id, seq.context_len))
    }

    /// Scheduling features for every waiting sequence that has arrived by
    /// `now`, in id order.
    pub fn waiting_inputs(&self, now: f64) -> Vec<PriorityInputs> {
        self.seqs
            .values()
            .filter(|s| s.phase == SeqPhase::WaitingPrefill && s.t_arr_current <= now)
            .map(|s| PriorityInputs {
                id: s.request_id,
                retrieval_count: s.retrieval_count,
                waiting_initial: now - s.t_arr_initial,
                context_len: s.context_len,
                waiting_current: now - s.t_arr_current,
            })
            .collect()
    }

    /// Runs one iteration: reserve decode growth (preempting decoders the
    /// cache cannot hold), admit waiting sequences in the given order
    /// against token, seat, and KV budgets, then decode. The clock
    /// advances by the iteration's modeled latency.
    pub fn admit_and_run_iteration(&mut self, ordered: &[u64]) -> Result<IterationOutcome> {
        let t0 = self.clock.now();
        let mut evicted = 0u64;
        let mut preempted = Vec::new();

        // Running decoders first: each will grow by one token, which may
        // need a block this iteration. A decoder whose block cannot be
        // allocated is preempted back to waiting (its next prefill
        // recomputes whatever has been evicted by then).
        let runners: Vec<u64> = self.running.clone();
        let mut survivors = Vec::with_capacity(runners.len());
        for id in runners {
            let seq = self.seqs.get(&id).expect("running sequence exists");
            if seq.remaining_decode == 0 {
                return Err(SaxError::invalid_state(format!(
                    "sequence {id} finished its segment but was not routed"
                )));
            }
            let new_ctx = seq.context_len + 1;
            match self.cache.allocate_growth(id, new_ctx, t0) {
                Ok(ev) => {
                    evicted += ev;
                    survivors.push(id);
                }
                Err(CapacityExhausted) => {
                    let ctx = seq.context_len;
                    self.cache.release(id, ctx);
                    let seq = self.seqs.get_mut(&id).expect("running sequence exists");
                    seq.phase = SeqPhase::WaitingPrefill;
                    preempted.push(id);
                }
            }
        }
        self.running = survivors;
        let decoded_seqs = self.running.len() as u64;

        // Admissions: walk the ordered waiting list greedily. Decoders
        // hold one token of budget each; computed prefill tokens consume
        // the rest; cached tokens are free. The first prefill of an
        // iteration is exempt from the token budget so an oversized
        // context can never wedge the queue.
        let mut budget_used = decoded_seqs;
        let mut admitted: Vec<u64> = Vec::new();
        let mut computed_total = 0u64;
        let mut cached_total = 0u64;
        for &id in ordered {
            let seq = match self.seqs.get(&id) {
                Some(s) => s,
                None => return Err(SaxError::invalid_input(format!("unknown sequence id {id}"))),
            };
            Self::expect_phase(seq, SeqPhase::WaitingPrefill, "admit")?;
            if self.running.len() + admitted.len() >= self.cfg.max_batch_seqs as usize {
                break;
            }
            let ctx = seq.context_len;
            let cached = self.cache.lookup_and_pin(id, ctx);
            let computed = (ctx - cached) as u64;
            let over_budget = budget_used + computed > self.cfg.max_batch_tokens as u64;
            if over_budget && !admitted.is_empty() {
                self.cache.unpin(id);
                continue;
            }
            match self.cache.allocate_admission(id, ctx, t0) {
                Ok(ev) => {
                    evicted += ev;
                    let seq = self.seqs.get_mut(&id).expect("admitted sequence exists");
                    seq.cached_prefix_len = cached;
                    seq.phase = SeqPhase::Decoding;
                    budget_used += computed;
                    computed_total += computed;
                    cached_total += cached as u64;
                    admitted.push(id);
                }
                Err(CapacityExhausted) => {
                    self.cache.unpin(id);
                }
            }
        }

        // Decode: every surviving decoder emits one token.
        for i in 0..self.running.len() {
            let id = self.running[i];
            let seq = self.seqs.get_mut(&id).expect("running sequence exists");
            seq.context_len += 1;
            seq.remaining_decode -= 1;
        }
        self.total_decoded_tokens += decoded_seqs;
        self.running.extend_from_slice(&admitted);

        let latency = self.cfg.iter_base
            + self.cfg.prefill_cost * computed_total as f64
            + self.cfg.decode_cost * decoded_seqs as f64;
        self.clock.advance(latency);
        let t_end = self.clock.now();
        for i in 0..self.running.len() {
            let id = self.running[i];
            self.cache.touch(id, t_end);
        }

        self.hits += cached_total;
        self.demands += cached_total + computed_total;
        self.total_computed_prefill += computed_total;
        self.iterations += 1;
        debug_assert!(self.cache.used_blocks() <= self.cfg.kv_capacity_blocks);

        let segment_done = self
            .running
            .iter()
            .copied()
            .filter(|id| self.seqs[id].remaining_decode == 0)
            .collect();
        Ok(IterationOutcome {
            report: IterationReport {
                time: t0,
                prefilled_computed: computed_total,
                prefilled_cached: cached_total,
                decoded_seqs,
                evicted_blocks: evicted,
                latency,
            },
            admitted,
            preempted,
            segment_done,
        })
    }
}
