//! Run-level metrics: the summary record every experiment emits, percentile
//! helpers, and baseline-vs-candidate ratio reports.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaxError};

/// Aggregated outcome of one simulated run. Field order is the canonical
/// column order for JSON and CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSummary {
    pub requests_completed: u64,
    /// Window length (online) or completion time of the last request
    /// (offline), in seconds.
    pub duration: f64,
    /// Completed requests per second.
    pub throughput: f64,
    /// Decoded plus computed-prefill tokens per second; cached tokens are
    /// excluded so cache gains show up as latency, not token count.
    pub token_throughput: f64,
    pub mean_latency: f64,
    pub p50: f64,
    pub p99: f64,
    pub prefix_hit_rate: f64,
    /// Initiated-but-unfinished fraction at the end of the window.
    pub pending_ratio: f64,
    /// Requests with a stalled resumption over requests resumed at all.
    pub stall_ratio: f64,
    pub mean_retrieval_count: f64,
    pub mean_retrieval_latency: f64,
    /// Retrievals cut short by the readiness signal, over all retrievals.
    pub early_stop_fraction: f64,
    pub mean_recall: f64,
}

impl MetricsSummary {
    /// Metric names in declaration (= output column) order.
    pub const FIELDS: [&'static str; 14] = [
        "requests_completed",
        "duration",
        "throughput",
        "token_throughput",
        "mean_latency",
        "p50",
        "p99",
        "prefix_hit_rate",
        "pending_ratio",
        "stall_ratio",
        "mean_retrieval_count",
        "mean_retrieval_latency",
        "early_stop_fraction",
        "mean_recall",
    ];

    /// Values as f64 in [`Self::FIELDS`] order.
    pub fn values(&self) -> [f64; 14] {
        [
            self.requests_completed as f64,
            self.duration,
            self.throughput,
            self.token_throughput,
            self.mean_latency,
            self.p50,
            self.p99,
            self.prefix_hit_rate,
            self.pending_ratio,
            self.stall_ratio,
            self.mean_retrieval_count,
            self.mean_retrieval_latency,
            self.early_stop_fraction,
            self.mean_recall,
        ]
    }

    /// CSV cell rendering in field order; integers render bare.
    pub fn csv_values(&self) -> Vec<String> {
        let mut out = vec![self.requests_completed.to_string()];
        out.extend(self.values()[1..].iter().map(|v| v.to_string()));
        out
    }
}

/// Nearest-rank percentile: the value at index `ceil(p/100 * n) - 1` of the
/// ascending sort.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(SaxError::invalid_input("percentile of an empty list"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(SaxError::invalid_input(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1)])
}

/// Fraction of initiated requests not finished inside the window.
pub fn pending_ratio(initiated: u64, completed: u64) -> f64 {
    debug_assert!(completed <= initiated);
    if initiated == 0 {
        0.0
    } else {
        (initiated - completed) as f64 / initiated as f64
    }
}

/// One row of a baseline-vs-candidate comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRatio {
    pub metric: &'static str,
    pub baseline: f64,
    pub candidate: f64,
    /// candidate / baseline; absent when the baseline is zero.
    pub ratio: Option<f64>,
    pub higher_is_better: bool,
}

const HIGHER_IS_BETTER: [bool; 14] = [
    true,  // requests_completed
    false, // duration
    true,  // throughput
    true,  // token_throughput
    false, // mean_latency
    false, // p50
    false, // p99
    true,  // prefix_hit_rate
    false, // pending_ratio
    false, // stall_ratio
    false, // mean_retrieval_count
    false, // mean_retrieval_latency
    false, // early_stop_fraction
    true,  // mean_recall
];

/// Per-metric candidate/baseline ratios in field order.
pub fn compare_report(baseline: &MetricsSummary, candidate: &MetricsSummary) -> Vec<MetricRatio> {
    let b = baseline.values();
    let c = candidate.values();
    MetricsSummary::FIELDS
        .iter()
        .zip(b.iter().zip(c.iter()))
        .zip(HIGHER_IS_BETTER.iter())
        .map(|((metric, (&b, &c)), &dir)| MetricRatio {
            metric,
            baseline: b,
            candidate: c,
            ratio: (b != 0.0).then(|| c / b),
            higher_is_better: dir,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(throughput: f64, mean_latency: f64) -> MetricsSummary {
        MetricsSummary {
            requests_completed: 10,
            duration: 1.0,
            throughput,
            token_throughput: 100.0,
            mean_latency,
            p50: mean_latency,
            p99: mean_latency * 2.0,
            prefix_hit_rate: 0.5,
            pending_ratio: 0.25,
            stall_ratio: 0.1,
            mean_retrieval_count: 4.0,
            mean_retrieval_latency: 0.2,
            early_stop_fraction: 0.3,
            mean_recall: 0.99,
        }
    }

    #[test]
    fn percentile_of_single_value_is_that_value() {
        for p in [0.0, 37.0, 100.0] {
            assert_eq!(percentile(&[4.2], p).unwrap(), 4.2);
        }
    }

    #[test]
    fn percentile_uses_nearest_rank_on_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(percentile(&values, 99.0).unwrap(), 99.0);
        assert_eq!(percentile(&values, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&values, 50.0).unwrap(), 50.0);
        assert_eq!(percentile(&values, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn percentile_rounds_rank_upward() {
        // ceil(0.5 * 4) - 1 = 1 -> second smallest.
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 50.0).unwrap(), 2.0);
        // ceil(0.9 * 4) - 1 = 3 -> maximum.
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 90.0).unwrap(), 4.0);
    }

    #[test]
    fn percentile_rejects_empty_and_out_of_range() {
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&[1.0], -1.0).is_err());
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn pending_ratio_matches_hand_values() {
        assert_eq!(pending_ratio(100, 80), 0.2);
        assert_eq!(pending_ratio(100, 100), 0.0);
        assert_eq!(pending_ratio(100, 0), 1.0);
        assert_eq!(pending_ratio(0, 0), 0.0);
    }

    #[test]
    fn identical_summaries_compare_at_parity() {
        let s = summary(2.0, 1.0);
        for row in compare_report(&s, &s) {
            assert_eq!(row.ratio, Some(1.0), "{}", row.metric);
        }
    }

    #[test]
    fn ratio_reproduces_published_style_speedups() {
        let base = summary(0.69, 1066.05);
        let cand = summary(2.36, 266.50);
        let rows = compare_report(&base, &cand);
        let tput = rows.iter().find(|r| r.metric == "throughput").unwrap();
        assert!((tput.ratio.unwrap() - 3.42).abs() < 0.005);
        assert!(tput.higher_is_better);
        let lat = rows.iter().find(|r| r.metric == "mean_latency").unwrap();
        assert!((lat.ratio.unwrap() - 0.25).abs() < 0.005);
        assert!(!lat.higher_is_better);
    }

    #[test]
    fn comparison_is_metricwise_reciprocal() {
        let a = summary(0.7, 3.0);
        let b = summary(2.1, 1.5);
        let ab = compare_report(&a, &b);
        let ba = compare_report(&b, &a);
        for (x, y) in ab.iter().zip(ba.iter()) {
            match (x.ratio, y.ratio) {
                (Some(r), Some(s)) => assert!((r * s - 1.0).abs() < 1e-12, "{}", x.metric),
                _ => panic!("both directions should divide cleanly here"),
            }
        }
    }

    #[test]
    fn zero_baseline_yields_no_ratio() {
        let mut base = summary(1.0, 1.0);
        base.early_stop_fraction = 0.0;
        let cand = summary(1.0, 1.0);
        let rows = compare_report(&base, &cand);
        let row = rows.iter().find(|r| r.metric == "early_stop_fraction").unwrap();
        assert_eq!(row.ratio, None);
    }

    #[test]
    fn json_field_order_matches_declared_columns() {
        let s = summary(1.0, 1.0);
        let json = serde_json::to_string(&s).unwrap();
        let mut last = 0;
        for f in MetricsSummary::FIELDS {
            let key = format!("\"{f}\":");
            let pos = json.find(&key).unwrap_or_else(|| panic!("{f} missing"));
            assert!(pos >= last, "{f} out of order");
            last = pos;
        }
        assert_eq!(s.csv_values().len(), MetricsSummary::FIELDS.len());
        let back: MetricsSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
