//! Seeded workload generation: multi-segment request traces whose retrieval
//! queries are dataset points perturbed by per-segment noise, so exact
//! ground truth stays recoverable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ann::dataset::Dataset;
use crate::error::{Result, SaxError};
use crate::seeding::derive_seed;

pub const DEFAULT_DOC_TOKENS: u32 = 200;
pub const DEFAULT_RETRY_CAP: u32 = 3;
pub const DEFAULT_QUERY_NOISE: f64 = 0.05;

/// Integer distribution: a rounded normal clamped into `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClampedNormal {
    pub mean: f64,
    pub spread: f64,
    #[serde(default)]
    pub min: u32,
    #[serde(default = "max_u32")]
    pub max: u32,
}

fn max_u32() -> u32 {
    u32::MAX
}

impl ClampedNormal {
    pub fn new(mean: f64, spread: f64, min: u32, max: u32) -> Self {
        ClampedNormal {
            mean,
            spread,
            min,
            max,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.mean.is_finite() && self.mean >= 0.0) {
            return Err(SaxError::config(format!("{what}: mean must be finite and nonnegative")));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(SaxError::config(format!("{what}: spread must be finite and nonnegative")));
        }
        if self.min > self.max {
            return Err(SaxError::config(format!("{what}: min exceeds max")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let raw = if self.spread == 0.0 {
            self.mean
        } else {
            Normal::new(self.mean, self.spread)
                .expect("validated spread")
                .sample(rng)
        };
        let rounded = raw.round();
        if rounded <= self.min as f64 {
            self.min
        } else if rounded >= self.max as f64 {
            self.max
        } else {
            rounded as u32
        }
    }
}

/// Arrival process for a workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum Arrival {
    /// Every request arrives at time zero.
    Offline,
    /// Poisson arrivals at `rate` per second over `duration` seconds.
    Poisson { rate: f64, duration: f64 },
}

/// Generation parameters for a request trace set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub seed: u64,
    /// Offline request count; under Poisson arrivals the count comes from
    /// the arrival process instead.
    pub num_requests: u32,
    pub arrival: Arrival,
    pub retrievals_per_request: ClampedNormal,
    pub segment_tokens: ClampedNormal,
    /// Tokens appended per retrieved document.
    pub doc_tokens: u32,
    /// Std-dev of the Gaussian perturbation applied per query coordinate.
    pub query_noise: f64,
    /// Extra retrieval rounds a request may add after failed retrievals.
    pub retry_cap: u32,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 0,
            num_requests: 64,
            arrival: Arrival::Offline,
            retrievals_per_request: ClampedNormal::new(4.0, 2.0, 0, 8),
            segment_tokens: ClampedNormal::new(150.0, 50.0, 10, u32::MAX),
            doc_tokens: DEFAULT_DOC_TOKENS,
            query_noise: DEFAULT_QUERY_NOISE,
            retry_cap: DEFAULT_RETRY_CAP,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        self.retrievals_per_request.validate("retrievals_per_request")?;
        self.segment_tokens.validate("segment_tokens")?;
        if self.doc_tokens == 0 {
            return Err(SaxError::config("doc_tokens must be positive"));
        }
        if !(self.query_noise.is_finite() && self.query_noise >= 0.0) {
            return Err(SaxError::config("query_noise must be finite and nonnegative"));
        }
        match self.arrival {
            Arrival::Offline => {
                if self.num_requests == 0 {
                    return Err(SaxError::config("num_requests must be positive"));
                }
            }
            Arrival::Poisson { rate, duration } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(SaxError::config("poisson rate must be positive"));
                }
                if !(duration > 0.0 && duration.is_finite()) {
                    return Err(SaxError::config("poisson duration must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// What a request does once a segment's tokens are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentAction {
    /// Issue a retrieval for the dataset point perturbed with `noise_seed`.
    Retrieve { query_point: u32, noise_seed: u64 },
    /// Emit the final answer and complete.
    Answer,
}

/// One reasoning segment: decode `decode_tokens`, then perform the action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment", into = "RawSegment")]
pub struct Segment {
    pub decode_tokens: u32,
    pub action: SegmentAction,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    decode_tokens: u32,
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_point: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_seed: Option<u64>,
}

impl From<Segment> for RawSegment {
    fn from(seg: Segment) -> Self {
        match seg.action {
            SegmentAction::Retrieve {
                query_point,
                noise_seed,
            } => RawSegment {
                decode_tokens: seg.decode_tokens,
                action: "retrieve".to_string(),
                query_point: Some(query_point),
                noise_seed: Some(noise_seed),
            },
            SegmentAction::Answer => RawSegment {
                decode_tokens: seg.decode_tokens,
                action: "answer".to_string(),
                query_point: None,
                noise_seed: None,
            },
        }
    }
}

impl TryFrom<RawSegment> for Segment {
    type Error = String;

    fn try_from(raw: RawSegment) -> std::result::Result<Self, String> {
        let action = match raw.action.as_str() {
            "retrieve" => {
                let query_point = raw
                    .query_point
                    .ok_or("retrieve segment missing query_point")?;
                let noise_seed = raw.noise_seed.ok_or("retrieve segment missing noise_seed")?;
                SegmentAction::Retrieve {
                    query_point,
                    noise_seed,
                }
            }
            "answer" => {
                if raw.query_point.is_some() || raw.noise_seed.is_some() {
                    return Err("answer segment must not carry query fields".to_string());
                }
                SegmentAction::Answer
            }
            other => return Err(format!("unknown segment action: {other}")),
        };
        Ok(Segment {
            decode_tokens: raw.decode_tokens,
            action,
        })
    }
}

/// A scripted request: interleaved retrieval segments closed by one answer
/// segment, plus the retry budget granted at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestTrace {
    pub id: u64,
    pub arrival_time: f64,
    pub segments: Vec<Segment>,
    pub max_extra_retrievals: u32,
}

/// Sorted Poisson arrival times over `[0, duration)` with exponential
/// inter-arrival gaps from a seeded generator.
pub fn poisson_arrivals(rate: f64, duration: f64, seed: u64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SaxError::invalid_input("rate must be positive"));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(SaxError::invalid_input("duration must be nonnegative"));
    }
    let exp = Exp::new(rate).expect("validated rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += exp.sample(&mut rng);
        if t >= duration {
            return Ok(out);
        }
        out.push(t);
    }
}

/// Generates the full trace set for a config. Each request draws from its
/// own derived stream, so traces are insensitive to the draw order of other
/// requests.
pub fn generate_workload(cfg: &WorkloadConfig, ds: &Dataset) -> Result<Vec<RequestTrace>> {
    cfg.validate()?;
    let arrivals: Vec<f64> = match cfg.arrival {
        Arrival::Offline => vec![0.0; cfg.num_requests as usize],
        Arrival::Poisson { rate, duration } => {
            poisson_arrivals(rate, duration, derive_seed(cfg.seed, u64::MAX, 0))?
        }
    };
    let count = ds.len() as u32;
    let mut traces = Vec::with_capacity(arrivals.len());
    for (id, arrival_time) in arrivals.into_iter().enumerate() {
        let id = id as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, id, 0));
        let rounds = cfg.retrievals_per_request.sample(&mut rng);
        let mut segments = Vec::with_capacity(rounds as usize + 1);
        for _ in 0..rounds {
            let decode_tokens = cfg.segment_tokens.sample(&mut rng);
            let query_point = rng.random_range(0..count);
            let noise_seed = rng.next_u64();
            segments.push(Segment {
                decode_tokens,
                action: SegmentAction::Retrieve {
                    query_point,
                    noise_seed,
                },
            });
        }
        segments.push(Segment {
            decode_tokens: cfg.segment_tokens.sample(&mut rng),
            action: SegmentAction::Answer,
        });
        traces.push(RequestTrace {
            id,
            arrival_time,
            segments,
            max_extra_retrievals: cfg.retry_cap,
        });
    }
    Ok(traces)
}

/// Builds the retry segment a request appends after a failed retrieval:
/// fresh reasoning tokens and a fresh noise draw against the same query
/// point. Fully determined by `(workload seed, request, ordinal)`.
pub fn retry_segment(
    cfg: &WorkloadConfig,
    request_id: u64,
    retry_ordinal: u32,
    query_point: u32,
) -> Segment {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, request_id, retry_ordinal as u64));
    let decode_tokens = cfg.segment_tokens.sample(&mut rng);
    let noise_seed = rng.next_u64();
    Segment {
        decode_tokens,
        action: SegmentAction::Retrieve {
            query_point,
            noise_seed,
        },
    }
}

/// Materializes the query vector for a retrieval segment: the source point
/// plus seeded Gaussian noise scaled by `noise_scale` per coordinate.
pub fn retrieval_query(
    ds: &Dataset,
    query_point: u32,
    noise_seed: u64,
    noise_scale: f64,
) -> Result<Vec<f32>> {
    if query_point as usize >= ds.len() {
        return Err(SaxError::invalid_input(format!(
            "query point {query_point} outside dataset of {}",
            ds.len()
        )));
    }
    let base = ds.vector(query_point);
    if noise_scale == 0.0 {
        return Ok(base.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    Ok(base
        .iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (*v as f64 + noise_scale * g) as f32
        })
        .collect())
}

/// Writes traces as JSON lines, one request per line.
pub fn write_workload(path: &Path, traces: &[RequestTrace]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for trace in traces {
        serde_json::to_writer(&mut w, trace)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads traces written by [`write_workload`].
pub fn read_workload(path: &Path) -> Result<Vec<RequestTrace>> {
    let r = BufReader::new(File::open(path)?);
    let mut traces = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: RequestTrace = serde_json::from_str(&line).map_err(|e| {
            SaxError::format(format!("workload line {}: {e}", lineno + 1))
        })?;
        traces.push(trace);
    }
    Ok(traces)
}
