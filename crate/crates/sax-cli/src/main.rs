use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sax_cli::config::{load_config, seed_override, GenDataConfig};
use sax_cli::matrix::{run_matrix, write_run_files, ExperimentSpec};
use sax_cli::presets::{preset, PRESET_NAMES};
use sax_core::ann::dataset::Dataset;
use sax_core::ann::hnsw::{build_index, BuildParams};
use sax_core::fileio::{read_dataset, read_index, write_dataset, write_index};
use sax_core::metrics::{compare_report, MetricsSummary};
use sax_core::orchestrator::{run, run_generated, RunConfig};
use sax_core::workload::{generate_workload, read_workload, write_workload, WorkloadConfig};
use sax_core::{Result, SaxError};

/// Deterministic desk-scale serving simulator for retrieval-augmented
/// agents, coupled to a real graph ANN index.
#[derive(Parser)]
#[command(name = "sax", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded Gaussian vector dataset file.
    GenData {
        /// JSON config (count, dim, seed, normalize); defaults used if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a graph index over a dataset file.
    BuildIndex {
        /// JSON config (m, ef_construction, seed); defaults used if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Output index file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate request traces for a dataset.
    GenWorkload {
        /// JSON workload config; defaults used if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Output JSON-lines trace file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one run configuration.
    Run {
        /// JSON run config; defaults used if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Pre-generated traces; generated from the config when omitted.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Worker threads for search execution (results are identical for
        /// any value).
        #[arg(long, default_value_t = 1)]
        ann_workers: usize,
        /// Output directory (run.summary.json, run.events.jsonl, ...).
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute an experiment spec or built-in preset.
    Matrix {
        /// Built-in preset name.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// JSON experiment spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Parallel runs; outputs are identical for any value.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output root; the spec writes into a subdirectory named after it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two summary JSON files metric by metric.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Output JSON ratio table.
        #[arg(long)]
        out: PathBuf,
    },
}

fn must_exist(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(SaxError::config(format!(
            "{what} file not found: {}",
            path.display()
        )))
    }
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(config: &Option<PathBuf>) -> Result<T> {
    match config {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

fn cmd_gen_data(config: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let mut cfg: GenDataConfig = load_or_default(&config)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    let ds = Dataset::generate_gaussian(cfg.count, cfg.dim, cfg.seed, cfg.normalize)?;
    write_dataset(&out, &ds)?;
    eprintln!("wrote dataset {} ({} x {})", out.display(), ds.len(), ds.dim());
    Ok(())
}

fn cmd_build_index(config: Option<PathBuf>, dataset: PathBuf, out: PathBuf) -> Result<()> {
    let mut params: BuildParams = load_or_default(&config)?;
    if let Some(seed) = seed_override()? {
        params.seed = seed;
    }
    must_exist(&dataset, "dataset")?;
    let ds = read_dataset(&dataset)?;
    let index = build_index(&ds, &params)?;
    write_index(&out, &index)?;
    eprintln!("wrote index {} ({} points)", out.display(), index.len());
    Ok(())
}

fn cmd_gen_workload(config: Option<PathBuf>, dataset: PathBuf, out: PathBuf) -> Result<()> {
    let mut cfg: WorkloadConfig = load_or_default(&config)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    must_exist(&dataset, "dataset")?;
    let ds = read_dataset(&dataset)?;
    let traces = generate_workload(&cfg, &ds)?;
    write_workload(&out, &traces)?;
    eprintln!("wrote workload {} ({} requests)", out.display(), traces.len());
    Ok(())
}

fn cmd_run(
    config: Option<PathBuf>,
    dataset: PathBuf,
    index: PathBuf,
    workload: Option<PathBuf>,
    ann_workers: usize,
    out: PathBuf,
) -> Result<()> {
    let mut cfg: RunConfig = load_or_default(&config)?;
    if let Some(seed) = seed_override()? {
        cfg.workload.seed = seed;
    }
    must_exist(&dataset, "dataset")?;
    let ds = read_dataset(&dataset)?;
    must_exist(&index, "index")?;
    let idx = read_index(&index)?;
    let output = match &workload {
        Some(w) => {
            must_exist(w, "workload")?;
            let traces = read_workload(w)?;
            run(&cfg, &ds, &idx, &traces, ann_workers)?
        }
        None => run_generated(&cfg, &ds, &idx, ann_workers)?,
    };
    std::fs::create_dir_all(&out)
        .map_err(|e| SaxError::config(format!("cannot create {}: {e}", out.display())))?;
    write_run_files(&out, "run", &output)?;
    eprintln!(
        "run complete: {} requests, {:.3} s simulated, outputs in {}",
        output.summary.requests_completed,
        output.summary.duration,
        out.display()
    );
    Ok(())
}

fn cmd_matrix(
    preset_name: Option<String>,
    spec_path: Option<PathBuf>,
    jobs: usize,
    out: PathBuf,
) -> Result<()> {
    let mut spec: ExperimentSpec = match (&preset_name, &spec_path) {
        (Some(name), None) => preset(name)?,
        (None, Some(p)) => load_config(p)?,
        _ => {
            return Err(SaxError::config(format!(
                "matrix needs exactly one of --preset ({}) or --spec",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    if let Some(seed) = seed_override()? {
        for r in &mut spec.runs {
            r.config.workload.seed = seed;
        }
    }
    let result = run_matrix(&spec, &out, jobs)?;
    eprintln!(
        "matrix {} complete: {} runs, results in {}",
        spec.name,
        result.rows.len(),
        result.dir.display()
    );
    Ok(())
}

fn cmd_report(baseline: PathBuf, candidate: PathBuf, out: PathBuf) -> Result<()> {
    let base: MetricsSummary = load_config(&baseline)?;
    let cand: MetricsSummary = load_config(&candidate)?;
    let rows = compare_report(&base, &cand);
    let mut text = serde_json::to_string_pretty(&rows)?;
    text.push('\n');
    std::fs::write(&out, text)
        .map_err(|e| SaxError::config(format!("cannot write {}: {e}", out.display())))?;
    eprintln!("wrote report {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out } => cmd_gen_data(config, out),
        Cmd::BuildIndex { config, dataset, out } => cmd_build_index(config, dataset, out),
        Cmd::GenWorkload { config, dataset, out } => cmd_gen_workload(config, dataset, out),
        Cmd::Run { config, dataset, index, workload, ann_workers, out } => {
            cmd_run(config, dataset, index, workload, ann_workers, out)
        }
        Cmd::Matrix { preset, spec, jobs, out } => cmd_matrix(preset, spec, jobs, out),
        Cmd::Report { baseline, candidate, out } => cmd_report(baseline, candidate, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
