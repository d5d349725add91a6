//! Experiment matrices: a named list of run configurations over one shared
//! dataset/index, executed (possibly in parallel) with outputs that are
//! byte-identical to serial execution.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sax_core::ann::dataset::Dataset;
use sax_core::ann::hnsw::{build_index, BuildParams, HnswIndex};
use sax_core::fileio::{read_dataset, read_index};
use sax_core::metrics::MetricsSummary;
use sax_core::orchestrator::{run, Event, RunConfig, RunOutput, TaskRecord};
use sax_core::workload::{read_workload, Arrival, RequestTrace};
use sax_core::{Result, SaxError};

use crate::config::GenDataConfig;

/// Where a spec's dataset comes from: a file that must exist, or an inline
/// generation recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    Path(PathBuf),
    Generate(GenDataConfig),
}

/// Where the index comes from: a file that must exist, or build parameters
/// applied to the spec's dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum IndexSource {
    Path(PathBuf),
    Build(BuildParams),
}

/// One run variation inside a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRun {
    pub name: String,
    pub config: RunConfig,
}

/// A full experiment: shared dataset/index/workload plus run variations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Subdirectory (under the CLI `--out` root) receiving this spec's
    /// files; defaults to `name`.
    #[serde(default)]
    pub output_dir: Option<String>,
    pub dataset: DatasetSource,
    #[serde(default = "default_index_source")]
    pub index: IndexSource,
    /// Optional shared workload file; when absent each run generates its
    /// own traces from its workload config.
    #[serde(default)]
    pub workload: Option<PathBuf>,
    #[serde(default = "default_ann_workers")]
    pub ann_workers: usize,
    pub runs: Vec<NamedRun>,
}

fn default_index_source() -> IndexSource {
    IndexSource::Build(BuildParams::default())
}

fn default_ann_workers() -> usize {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(SaxError::config(format!("spec {}: no runs", self.name)));
        }
        let mut names = std::collections::BTreeSet::new();
        for r in &self.runs {
            if r.name.is_empty() || !r.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(SaxError::config(format!(
                    "spec {}: run name {:?} must be nonempty [A-Za-z0-9_-]",
                    self.name, r.name
                )));
            }
            if !names.insert(&r.name) {
                return Err(SaxError::config(format!(
                    "spec {}: duplicate run name {:?}",
                    self.name, r.name
                )));
            }
            r.config.validate()?;
        }
        Ok(())
    }
}

/// One executed run with everything needed for files and reports.
#[derive(Debug)]
pub struct MatrixRow {
    pub name: String,
    pub config: RunConfig,
    pub output: RunOutput,
}

#[derive(Debug)]
pub struct MatrixOutput {
    /// Directory the files were written into.
    pub dir: PathBuf,
    pub rows: Vec<MatrixRow>,
}

pub fn resolve_dataset(src: &DatasetSource) -> Result<Dataset> {
    match src {
        DatasetSource::Path(p) => {
            if !p.exists() {
                return Err(SaxError::config(format!(
                    "dataset file not found: {}",
                    p.display()
                )));
            }
            read_dataset(p)
        }
        DatasetSource::Generate(g) => Dataset::generate_gaussian(g.count, g.dim, g.seed, g.normalize),
    }
}

pub fn resolve_index(src: &IndexSource, ds: &Dataset) -> Result<HnswIndex> {
    match src {
        IndexSource::Path(p) => {
            if !p.exists() {
                return Err(SaxError::config(format!(
                    "index file not found: {}",
                    p.display()
                )));
            }
            read_index(p)
        }
        IndexSource::Build(params) => build_index(ds, params),
    }
}

/// Fixed leading columns of the combined results CSV; the metric columns
/// follow in `MetricsSummary::FIELDS` order.
pub const CSV_LEAD_COLUMNS: [&str; 6] = ["name", "mode", "policy", "top_k", "ef", "rate"];

pub fn results_csv_header() -> String {
    let mut cols: Vec<&str> = CSV_LEAD_COLUMNS.to_vec();
    cols.extend(MetricsSummary::FIELDS);
    cols.join(",")
}

pub fn results_csv_row(name: &str, cfg: &RunConfig, summary: &MetricsSummary) -> String {
    let mut cells: Vec<String> = vec![
        name.to_string(),
        cfg.retrieval_mode.label().to_string(),
        String::from(cfg.policy),
        cfg.top_k.to_string(),
        cfg.retrieval_mode.ef().map(|e| e.to_string()).unwrap_or_default(),
        match cfg.workload.arrival {
            Arrival::Offline => String::new(),
            Arrival::Poisson { rate, .. } => rate.to_string(),
        },
    ];
    cells.extend(summary.csv_values());
    cells.join(",")
}

pub fn results_csv(rows: &[MatrixRow]) -> String {
    let mut out = results_csv_header();
    out.push('\n');
    for row in rows {
        out.push_str(&results_csv_row(&row.name, &row.config, &row.output.summary));
        out.push('\n');
    }
    out
}

const TASK_CSV_HEADER: &str = "request_id,sim_start,finish_time,latency,early,result_cut,natural_stop_step,maturity_step,recall,recall_natural,recall_at_maturity";

pub fn tasks_csv(tasks: &[TaskRecord]) -> String {
    let mut out = String::from(TASK_CSV_HEADER);
    out.push('\n');
    for t in tasks {
        let maturity = t.maturity_step.map(|m| m.to_string()).unwrap_or_default();
        let r_mat = t.recall_at_maturity.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            t.request_id,
            t.sim_start,
            t.finish_time,
            t.latency,
            t.early,
            t.result_cut,
            t.natural_stop_step,
            maturity,
            t.recall,
            t.recall_natural,
            r_mat,
        ));
    }
    out
}

pub fn events_jsonl(events: &[Event]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| SaxError::config(format!("cannot write {}: {e}", path.display())))
}

/// Writes one run's artifact set: `<stem>.summary.json`,
/// `<stem>.events.jsonl`, `<stem>.iterations.jsonl`, `<stem>.tasks.csv`.
pub fn write_run_files(dir: &Path, stem: &str, out: &RunOutput) -> Result<()> {
    let mut summary = serde_json::to_string_pretty(&out.summary)?;
    summary.push('\n');
    write_text(&dir.join(format!("{stem}.summary.json")), &summary)?;
    write_text(&dir.join(format!("{stem}.events.jsonl")), &events_jsonl(&out.events)?)?;
    let mut iters = String::new();
    for it in &out.iterations {
        iters.push_str(&serde_json::to_string(it)?);
        iters.push('\n');
    }
    write_text(&dir.join(format!("{stem}.iterations.jsonl")), &iters)?;
    write_text(&dir.join(format!("{stem}.tasks.csv")), &tasks_csv(&out.tasks))
}

/// Executes every run in the spec and writes per-run files plus the
/// combined `results.csv`. `jobs > 1` runs variations on a thread pool;
/// outputs are collected in spec order so they never depend on `jobs`.
pub fn run_matrix(spec: &ExperimentSpec, out_root: &Path, jobs: usize) -> Result<MatrixOutput> {
    spec.validate()?;
    let ds = resolve_dataset(&spec.dataset)?;
    let index = resolve_index(&spec.index, &ds)?;
    let shared_traces: Option<Vec<RequestTrace>> = match &spec.workload {
        Some(p) => {
            if !p.exists() {
                return Err(SaxError::config(format!(
                    "workload file not found: {}",
                    p.display()
                )));
            }
            Some(read_workload(p)?)
        }
        None => None,
    };
    let execute = |nr: &NamedRun| -> Result<MatrixRow> {
        let output = match &shared_traces {
            Some(traces) => run(&nr.config, &ds, &index, traces, spec.ann_workers)?,
            None => {
                let traces = sax_core::workload::generate_workload(&nr.config.workload, &ds)?;
                run(&nr.config, &ds, &index, &traces, spec.ann_workers)?
            }
        };
        Ok(MatrixRow { name: nr.name.clone(), config: nr.config.clone(), output })
    };
    let rows: Vec<MatrixRow> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SaxError::config(format!("matrix worker pool: {e}")))?;
        pool.install(|| spec.runs.par_iter().map(execute).collect::<Result<Vec<_>>>())?
    } else {
        spec.runs.iter().map(execute).collect::<Result<Vec<_>>>()?
    };

    let dir = out_root.join(spec.output_dir.as_deref().unwrap_or(&spec.name));
    std::fs::create_dir_all(&dir)
        .map_err(|e| SaxError::config(format!("cannot create {}: {e}", dir.display())))?;
    for row in &rows {
        write_run_files(&dir, &row.name, &row.output)?;
    }
    write_text(&dir.join("results.csv"), &results_csv(&rows))?;
    Ok(MatrixOutput { dir, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sax_core::orchestrator::RetrievalMode;
    use sax_core::workload::{ClampedNormal, WorkloadConfig};

    fn small_spec() -> ExperimentSpec {
        let base = RunConfig {
            retrieval_mode: RetrievalMode::Ann { ef: 16 },
            top_k: 3,
            workload: WorkloadConfig {
                seed: 5,
                num_requests: 4,
                retrievals_per_request: ClampedNormal::new(1.0, 1.0, 0, 2),
                segment_tokens: ClampedNormal::new(15.0, 5.0, 5, 40),
                doc_tokens: 20,
                ..WorkloadConfig::default()
            },
            ..RunConfig::default()
        };
        ExperimentSpec {
            name: "tiny".into(),
            output_dir: None,
            dataset: DatasetSource::Generate(GenDataConfig {
                count: 128,
                dim: 8,
                seed: 3,
                normalize: false,
            }),
            index: IndexSource::Build(BuildParams { m: 8, ef_construction: 32, seed: 1 }),
            workload: None,
            ann_workers: 1,
            runs: vec![
                NamedRun { name: "a".into(), config: base.clone() },
                NamedRun {
                    name: "b".into(),
                    config: RunConfig { retrieval_mode: RetrievalMode::Enn, ..base },
                },
            ],
        }
    }

    #[test]
    fn csv_has_fixed_lead_columns_then_metric_fields() {
        let header = results_csv_header();
        assert!(header.starts_with("name,mode,policy,top_k,ef,rate,requests_completed,"));
        assert_eq!(
            header.split(',').count(),
            CSV_LEAD_COLUMNS.len() + MetricsSummary::FIELDS.len()
        );
    }

    #[test]
    fn matrix_outputs_do_not_depend_on_job_count() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let serial = run_matrix(&spec, &tmp.path().join("serial"), 1).unwrap();
        let parallel = run_matrix(&spec, &tmp.path().join("parallel"), 4).unwrap();
        let read = |dir: &Path, f: &str| std::fs::read(dir.join(f)).unwrap();
        for f in [
            "results.csv",
            "a.summary.json",
            "a.events.jsonl",
            "b.summary.json",
            "b.events.jsonl",
        ] {
            assert_eq!(read(&serial.dir, f), read(&parallel.dir, f), "{f}");
        }
    }

    #[test]
    fn rerunning_a_matrix_is_idempotent() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = small_spec();
        run_matrix(&spec, tmp.path(), 1).unwrap();
        let first = std::fs::read(tmp.path().join("tiny/results.csv")).unwrap();
        run_matrix(&spec, tmp.path(), 1).unwrap();
        let second = std::fs::read(tmp.path().join("tiny/results.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn missing_dataset_file_is_a_startup_error_naming_the_path() {
        let mut spec = small_spec();
        spec.dataset = DatasetSource::Path(PathBuf::from("/nonexistent/base.saxv"));
        let tmp = tempfile::tempdir().unwrap();
        let err = run_matrix(&spec, tmp.path(), 1).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("/nonexistent/base.saxv"), "{msg}");
    }

    #[test]
    fn duplicate_run_names_are_rejected() {
        let mut spec = small_spec();
        spec.runs[1].name = "a".into();
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.runs.clear();
        assert!(spec.validate().is_err(), "empty run list");
    }

    #[test]
    fn single_run_spec_yields_one_summary_and_one_csv_row() {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = small_spec();
        spec.runs.truncate(1);
        let out = run_matrix(&spec, tmp.path(), 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        let csv = std::fs::read_to_string(out.dir.join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "header plus one row");
        assert!(out.dir.join("a.summary.json").exists());
        assert!(!out.dir.join("b.summary.json").exists());
    }

    #[test]
    fn spec_json_round_trips_with_unknown_fields_rejected() {
        let spec = small_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let bad = text.replace("\"ann_workers\":1", "\"ann_worker\":1");
        assert!(serde_json::from_str::<ExperimentSpec>(&bad).is_err());
    }
}
