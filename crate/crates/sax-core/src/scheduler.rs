//! Batch-ordering policies for waiting sequences: plain FCFS and a
//! hierarchical priority scheme that buckets sequences into levels from
//! per-invocation thresholds over retrieval depth, age, and context size.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaxError};

pub const DEFAULT_PRIORITY_GROUPS: u32 = 6;

/// Per-sequence features sampled at a scheduling invocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityInputs {
    pub id: u64,
    /// Retrievals completed so far.
    pub retrieval_count: u32,
    /// Seconds since the request first arrived.
    pub waiting_initial: f64,
    /// Tokens accumulated in the sequence context.
    pub context_len: u32,
    /// Seconds since the sequence last became ready to run.
    pub waiting_current: f64,
}

/// Level lower bounds per metric, computed over one waiting set.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub groups: u32,
    pub retrieval_count: Vec<f64>,
    pub waiting_initial: Vec<f64>,
    pub context_len: Vec<f64>,
}

/// Batch ordering policy, configured as `"fcfs"` or `"priority:<G>"`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchedPolicy {
    #[default]
    Fcfs,
    Priority { groups: u32 },
}

impl fmt::Display for SchedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedPolicy::Fcfs => write!(f, "fcfs"),
            SchedPolicy::Priority { groups } => write!(f, "priority:{groups}"),
        }
    }
}

impl FromStr for SchedPolicy {
    type Err = SaxError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fcfs" {
            return Ok(SchedPolicy::Fcfs);
        }
        if let Some(g) = s.strip_prefix("priority:") {
            let groups: u32 = g
                .parse()
                .map_err(|_| SaxError::config(format!("bad priority group count: {g:?}")))?;
            if groups == 0 {
                return Err(SaxError::config("priority group count must be at least 1"));
            }
            return Ok(SchedPolicy::Priority { groups });
        }
        Err(SaxError::config(format!(
            "unknown policy {s:?}; expected \"fcfs\" or \"priority:<G>\""
        )))
    }
}

impl TryFrom<String> for SchedPolicy {
    type Error = SaxError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchedPolicy> for String {
    fn from(p: SchedPolicy) -> String {
        p.to_string()
    }
}

fn metric_thresholds(values: impl Iterator<Item = f64> + Clone, groups: u32) -> Vec<f64> {
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.fold(f64::NEG_INFINITY, f64::max);
    (0..groups)
        .map(|k| min + (k as f64 / groups as f64) * (max - min))
        .collect()
}

/// Evenly spaced lower bounds between each metric's min and max over the
/// waiting set: `T_k = min + (k/G)(max - min)` for `k` in `0..G`.
pub fn compute_thresholds(waiting: &[PriorityInputs], groups: u32) -> Result<ThresholdTable> {
    if waiting.is_empty() {
        return Err(SaxError::invalid_input("thresholds need a nonempty waiting set"));
    }
    if groups == 0 {
        return Err(SaxError::invalid_input("group count must be at least 1"));
    }
    Ok(ThresholdTable {
        groups,
        retrieval_count: metric_thresholds(
            waiting.iter().map(|s| s.retrieval_count as f64),
            groups,
        ),
        waiting_initial: metric_thresholds(waiting.iter().map(|s| s.waiting_initial), groups),
        context_len: metric_thresholds(waiting.iter().map(|s| s.context_len as f64), groups),
    })
}

/// Highest level whose bound any metric strictly exceeds; level 0 when no
/// bound is exceeded.
pub fn assign_level(seq: &PriorityInputs, table: &ThresholdTable) -> u32 {
    for j in (0..table.groups).rev() {
        let i = j as usize;
        if seq.retrieval_count as f64 > table.retrieval_count[i]
            || seq.waiting_initial > table.waiting_initial[i]
            || seq.context_len as f64 > table.context_len[i]
        {
            return j;
        }
    }
    0
}

/// Orders a waiting set for admission. FCFS runs oldest-ready first;
/// priority runs levels high to low, longest-waiting first within a level.
/// All remaining ties break toward the smaller request id.
pub fn order_batch(waiting: &[PriorityInputs], policy: SchedPolicy) -> Vec<PriorityInputs> {
    let mut out = waiting.to_vec();
    match policy {
        SchedPolicy::Fcfs => {
            out.sort_by(|a, b| {
                b.waiting_current
                    .total_cmp(&a.waiting_current)
                    .then(a.id.cmp(&b.id))
            });
        }
        SchedPolicy::Priority { groups } => {
            if out.is_empty() {
                return out;
            }
            let table = compute_thresholds(waiting, groups).expect("nonempty waiting set");
            out.sort_by(|a, b| {
                assign_level(b, &table)
                    .cmp(&assign_level(a, &table))
                    .then(b.waiting_current.total_cmp(&a.waiting_current))
                    .then(a.id.cmp(&b.id))
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(id: u64, r: u32, w: f64, c: u32, wcur: f64) -> PriorityInputs {
        PriorityInputs {
            id,
            retrieval_count: r,
            waiting_initial: w,
            context_len: c,
            waiting_current: wcur,
        }
    }

    #[test]
    fn thresholds_match_worked_example() {
        let got = metric_thresholds([0.0, 10.0].into_iter(), 5);
        let want = [0.0, 2.0, 4.0, 6.0, 8.0];
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn degenerate_range_yields_equal_thresholds() {
        let got = metric_thresholds([7.0, 7.0, 7.0].into_iter(), 4);
        assert_eq!(got, vec![7.0; 4]);
    }

    #[test]
    fn single_group_threshold_is_the_minimum() {
        assert_eq!(metric_thresholds([3.0, 9.0].into_iter(), 1), vec![3.0]);
    }

    #[test]
    fn level_zero_when_nothing_exceeds_a_bound() {
        let waiting = [seq(0, 2, 5.0, 100, 1.0), seq(1, 4, 9.0, 300, 2.0)];
        let table = compute_thresholds(&waiting, 6).unwrap();
        assert_eq!(assign_level(&waiting[0], &table), 0);
    }

    #[test]
    fn metric_at_maximum_lands_in_top_level() {
        let waiting = [seq(0, 0, 5.0, 100, 1.0), seq(1, 8, 5.0, 100, 2.0)];
        let table = compute_thresholds(&waiting, 6).unwrap();
        assert_eq!(assign_level(&waiting[1], &table), 5);
    }

    #[test]
    fn worked_level_assignment_at_retrieval_depth_three() {
        let waiting: Vec<PriorityInputs> =
            (0..=5).map(|r| seq(r as u64, r, 1.0, 50, 1.0)).collect();
        let table = compute_thresholds(&waiting, 6).unwrap();
        assert_eq!(assign_level(&waiting[3], &table), 3);
        assert_eq!(assign_level(&waiting[0], &table), 0);
        assert_eq!(assign_level(&waiting[5], &table), 5);
    }

    #[test]
    fn fcfs_runs_oldest_ready_first_with_id_ties() {
        let waiting = [
            seq(3, 0, 1.0, 10, 5.0),
            seq(1, 0, 1.0, 10, 9.0),
            seq(2, 0, 1.0, 10, 5.0),
        ];
        let order: Vec<u64> = order_batch(&waiting, SchedPolicy::Fcfs)
            .iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn longer_current_wait_wins_within_a_level() {
        let waiting = [seq(0, 2, 4.0, 100, 5.0), seq(1, 2, 4.0, 100, 9.0)];
        let order: Vec<u64> = order_batch(&waiting, SchedPolicy::Priority { groups: 6 })
            .iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(order, vec![1, 0]);
    }

    #[test]
    fn priority_overtakes_fcfs_for_deep_retrievers() {
        // A has burned six retrieval rounds but only just became ready again;
        // B is on its first round and has waited longer since resuming.
        let a = seq(0, 6, 12.0, 400, 2.0);
        let b = seq(1, 1, 12.0, 400, 8.0);
        let waiting = [a, b];
        let fcfs: Vec<u64> = order_batch(&waiting, SchedPolicy::Fcfs)
            .iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(fcfs, vec![1, 0]);
        let prio: Vec<u64> = order_batch(&waiting, SchedPolicy::Priority { groups: 6 })
            .iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(prio, vec![0, 1]);
    }

    #[test]
    fn single_group_priority_degenerates_to_longest_current_wait() {
        let waiting = [
            seq(0, 9, 1.0, 800, 3.0),
            seq(1, 0, 9.0, 10, 7.0),
            seq(2, 4, 5.0, 400, 5.0),
        ];
        let order: Vec<u64> = order_batch(&waiting, SchedPolicy::Priority { groups: 1 })
            .iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(order, vec![1, 2, 0]);
        let table = compute_thresholds(&waiting, 1).unwrap();
        assert!(waiting.iter().all(|s| assign_level(s, &table) == 0));
    }

    #[test]
    fn ordering_is_deterministic_and_empty_safe() {
        let waiting = [seq(0, 2, 4.0, 100, 5.0), seq(1, 5, 1.0, 300, 5.0)];
        let a = order_batch(&waiting, SchedPolicy::Priority { groups: 6 });
        let b = order_batch(&waiting, SchedPolicy::Priority { groups: 6 });
        assert_eq!(a, b);
        assert!(order_batch(&[], SchedPolicy::Fcfs).is_empty());
        assert!(order_batch(&[], SchedPolicy::Priority { groups: 6 }).is_empty());
    }

    #[test]
    fn policy_strings_round_trip_and_reject_garbage() {
        assert_eq!("fcfs".parse::<SchedPolicy>().unwrap(), SchedPolicy::Fcfs);
        assert_eq!(
            "priority:6".parse::<SchedPolicy>().unwrap(),
            SchedPolicy::Priority { groups: 6 }
        );
        assert_eq!(SchedPolicy::Priority { groups: 3 }.to_string(), "priority:3");
        assert!("priority:0".parse::<SchedPolicy>().is_err());
        assert!("priority:x".parse::<SchedPolicy>().is_err());
        assert!("random".parse::<SchedPolicy>().is_err());
        let p: SchedPolicy = serde_json::from_str("\"priority:4\"").unwrap();
        assert_eq!(p, SchedPolicy::Priority { groups: 4 });
        assert_eq!(serde_json::to_string(&SchedPolicy::Fcfs).unwrap(), "\"fcfs\"");
    }

    /// Brute-force reference: enumerate every (level, metric) pair and take
    /// the maximum exceeded level, with thresholds recomputed literally.
    fn oracle_level(seq: &PriorityInputs, waiting: &[PriorityInputs], groups: u32) -> u32 {
        let metrics: [Vec<f64>; 3] = [
            waiting.iter().map(|s| s.retrieval_count as f64).collect(),
            waiting.iter().map(|s| s.waiting_initial).collect(),
            waiting.iter().map(|s| s.context_len as f64).collect(),
        ];
        let own = [
            seq.retrieval_count as f64,
            seq.waiting_initial,
            seq.context_len as f64,
        ];
        let mut best = 0;
        for (values, mine) in metrics.iter().zip(own.iter()) {
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for j in 0..groups {
                let bound = min + (j as f64) * (max - min) / (groups as f64);
                if *mine > bound && j > best {
                    best = j;
                }
            }
        }
        best
    }

    #[test]
    fn level_assignment_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xABC);
        for _ in 0..1000 {
            let n = rng.random_range(1..=20usize);
            let groups = rng.random_range(1..=8u32);
            let waiting: Vec<PriorityInputs> = (0..n)
                .map(|id| {
                    seq(
                        id as u64,
                        rng.random_range(0..12),
                        rng.random_range(0.0..50.0),
                        rng.random_range(0..4096),
                        rng.random_range(0.0..50.0),
                    )
                })
                .collect();
            let table = compute_thresholds(&waiting, groups).unwrap();
            for s in &waiting {
                assert_eq!(
                    assign_level(s, &table),
                    oracle_level(s, &waiting, groups),
                    "instance {s:?} groups {groups}"
                );
            }
        }
    }

    fn input_strategy() -> impl Strategy<Value = Vec<PriorityInputs>> {
        prop::collection::vec(
            (0u32..20, 0.0f64..100.0, 0u32..2048, 0.0f64..100.0),
            1..16,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (r, w, c, wcur))| seq(i as u64, r, w, c, wcur))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn order_batch_permutes_its_input(waiting in input_strategy(), g in 1u32..8) {
            for policy in [SchedPolicy::Fcfs, SchedPolicy::Priority { groups: g }] {
                let out = order_batch(&waiting, policy);
                let mut got: Vec<u64> = out.iter().map(|s| s.id).collect();
                got.sort_unstable();
                let want: Vec<u64> = (0..waiting.len() as u64).collect();
                prop_assert_eq!(got, want);
            }
        }

        #[test]
        fn growing_a_metric_never_lowers_the_level(
            waiting in input_strategy(),
            pick in 0usize..16,
            which in 0usize..3,
            bump in 0.1f64..50.0,
            g in 1u32..8,
        ) {
            let table = compute_thresholds(&waiting, g).unwrap();
            let base = waiting[pick % waiting.len()];
            let mut grown = base;
            match which {
                0 => grown.retrieval_count += bump as u32 + 1,
                1 => grown.waiting_initial += bump,
                _ => grown.context_len += bump as u32 + 1,
            }
            prop_assert!(assign_level(&grown, &table) >= assign_level(&base, &table));
        }
    }
}
