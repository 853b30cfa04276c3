//! Subcommand implementations shared by the binary and the tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nqk_core::{Error, Result};
use serde::Serialize;

use crate::analysis::{bootstrap, diagnostics, kernel_report, train_eval_cell, KernelReport, MetricsRow};
use crate::config::ExperimentConfig;
use crate::output::{write_csv, write_json, RunManifest};
use crate::pipeline::{encode_all, preprocess_cached, FeatureCell};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Preprocess,
    Encode,
    TrainEval,
    KernelReport,
    Diagnostics,
    Sweep,
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub preprocess_cache_hit: bool,
    /// Cells served from the feature cache.
    pub cached_cells: usize,
    /// Failed cells with their errors; completed cells are still written.
    pub failures: Vec<(String, bool)>,
}

impl RunSummary {
    /// 0 on success, 3 if any failure was numerical, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else if self.failures.iter().any(|(_, numerical)| *numerical) {
            3
        } else {
            2
        }
    }
}

/// Exit code for an error that stopped a command.
pub fn error_exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

#[derive(Serialize)]
struct EncodeRow {
    seed: u64,
    gamma: f64,
    n_inputs: usize,
    mean_purity: Option<f64>,
    cache_hit: bool,
    failed_input: Option<usize>,
    error: Option<String>,
}

struct Encoded {
    cells: Vec<FeatureCell>,
}

fn encode_step(cfg: &ExperimentConfig, out: &Path, summary: &mut RunSummary, progress: bool) -> Result<Encoded> {
    let (data, hit, base) = preprocess_cached(cfg, out)?;
    summary.preprocess_cache_hit = hit;
    summary.artifacts.push(nqk_core::store::bin_path(&base));
    summary.artifacts.push(nqk_core::store::json_path(&base));
    let outcomes = encode_all(cfg, &data, out, progress);
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for o in outcomes {
        let n_inputs = data.dataset.inputs.len();
        match o.result {
            Ok(cell) => {
                summary.cached_cells += usize::from(o.cache_hit);
                summary.artifacts.push(nqk_core::store::bin_path(&o.path));
                summary.artifacts.push(nqk_core::store::json_path(&o.path));
                rows.push(EncodeRow {
                    seed: o.disorder_seed,
                    gamma: o.gamma,
                    n_inputs,
                    mean_purity: Some(cell.mean_purity()),
                    cache_hit: o.cache_hit,
                    failed_input: None,
                    error: None,
                });
                cells.push(cell);
            }
            Err(e) => {
                summary.failures.push((e.to_string(), e.source.is_numerical()));
                rows.push(EncodeRow {
                    seed: o.disorder_seed,
                    gamma: o.gamma,
                    n_inputs,
                    mean_purity: None,
                    cache_hit: false,
                    failed_input: e.input_index,
                    error: Some(e.source.to_string()),
                });
            }
        }
    }
    let path = out.join("encode.csv");
    write_csv(&path, &rows)?;
    summary.artifacts.push(path);
    Ok(Encoded { cells })
}

fn train_eval_step(cfg: &ExperimentConfig, out: &Path, cells: &[FeatureCell], summary: &mut RunSummary) -> Result<()> {
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut best = Vec::new();
    for cell in cells {
        let (r, b, model) = train_eval_cell(cfg, cell)?;
        best.push(r[b]);
        let path = out.join("models").join(format!("model-seed{}-gamma{}.json", cell.disorder_seed, cell.gamma));
        write_json(&path, &model)?;
        summary.artifacts.push(path);
        rows.extend(r);
    }
    for (name, data) in [("train_eval.csv", &rows), ("train_eval_summary.csv", &best)] {
        let path = out.join(name);
        write_csv(&path, data)?;
        summary.artifacts.push(path);
    }
    if let Some(b) = &cfg.bootstrap {
        let path = out.join("bootstrap.csv");
        write_csv(&path, &bootstrap(&rows, b))?;
        summary.artifacts.push(path);
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumRow {
    seed: u64,
    gamma: f64,
    index: usize,
    eigenvalue: f64,
}

fn kernel_step(cfg: &ExperimentConfig, out: &Path, cells: &[FeatureCell], summary: &mut RunSummary) -> Result<Vec<KernelReport>> {
    let reports = cells.iter().map(|c| kernel_report(cfg, c)).collect::<Result<Vec<_>>>()?;
    let spectrum: Vec<SpectrumRow> = reports
        .iter()
        .flat_map(|r| {
            r.spectrum
                .iter()
                .enumerate()
                .map(|(index, &eigenvalue)| SpectrumRow { seed: r.seed, gamma: r.gamma, index, eigenvalue })
        })
        .collect();
    let json_path = out.join("kernel_report.json");
    write_json(&json_path, &reports)?;
    let csv_path = out.join("spectrum.csv");
    write_csv(&csv_path, &spectrum)?;
    summary.artifacts.extend([json_path, csv_path]);
    Ok(reports)
}

fn diagnostics_step(cfg: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let (data, hit, _) = preprocess_cached(cfg, out)?;
    summary.preprocess_cache_hit = hit;
    let path = out.join("diagnostics.csv");
    write_csv(&path, &diagnostics(cfg, &data)?)?;
    summary.artifacts.push(path);
    Ok(())
}

/// Runs `cmd` with outputs under `out` and records them in the manifest.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path, progress: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let mut s = RunSummary::default();
    match cmd {
        Command::Preprocess => {
            let (_, hit, base) = preprocess_cached(cfg, out)?;
            s.preprocess_cache_hit = hit;
            s.artifacts.push(nqk_core::store::bin_path(&base));
            s.artifacts.push(nqk_core::store::json_path(&base));
        }
        Command::Encode => {
            encode_step(cfg, out, &mut s, progress)?;
        }
        Command::TrainEval => {
            let e = encode_step(cfg, out, &mut s, progress)?;
            train_eval_step(cfg, out, &e.cells, &mut s)?;
        }
        Command::KernelReport => {
            let e = encode_step(cfg, out, &mut s, progress)?;
            kernel_step(cfg, out, &e.cells, &mut s)?;
        }
        Command::Diagnostics => diagnostics_step(cfg, out, &mut s)?,
        Command::Sweep => {
            let e = encode_step(cfg, out, &mut s, progress)?;
            train_eval_step(cfg, out, &e.cells, &mut s)?;
            kernel_step(cfg, out, &e.cells, &mut s)?;
            if cfg.n_sites <= crate::analysis::MAX_DIAGNOSTIC_SITES {
                diagnostics_step(cfg, out, &mut s)?;
            }
        }
    }
    s.artifacts.sort();
    s.artifacts.dedup();
    RunManifest::record(out, &cfg.hash(), &s.artifacts, start.elapsed().as_secs_f64())?;
    Ok(s)
}
