//! Training sweeps, kernel reports, bootstrap summaries and encoding diagnostics.

use nalgebra::DMatrix;
use nqk_core::decode::FeatureLayout;
use nqk_core::dynamics::{sample_disorder, DriveSchedule, Encoder};
use nqk_core::kernel::{alignment, center_kernel, effective_rank, generalization_bound, gram, spectrum, BoundInputs};
use nqk_core::qcore::{mean_site_negativity, von_neumann_entropy};
use nqk_core::train::{one_vs_rest_targets, ovr_fit, ovr_metrics, ovr_scores, OvrModel};
use nqk_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BootstrapConfig, ExperimentConfig};
use crate::pipeline::{FeatureCell, PreparedData};

/// One line of the training sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub train_risk: f64,
    pub test_risk: f64,
    /// Training margin risk at the configured margin.
    pub margin_risk: f64,
    pub reff: f64,
    /// Largest bound over the one-vs-rest classifiers, each with `Lambda = 1 / ||w||^2`.
    pub bound: f64,
}

/// `Tr[K_c] / n` of the training features.
pub fn centered_trace_over_n(train: &DMatrix<f64>) -> f64 {
    let n = train.nrows() as f64;
    let means = train.row_mean();
    train.row_iter().map(|r| (r - &means).norm_squared()).sum::<f64>() / n
}

pub fn cell_effective_rank(cell: &FeatureCell) -> Result<f64> {
    effective_rank(&spectrum(&center_kernel(&gram(&cell.train)?)?)?)
}

fn bound_for(model: &OvrModel, cfg: &ExperimentConfig, n: usize, trace: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for m in &model.models {
        let w2 = m.weight_norm_sq();
        let b = BoundInputs {
            margin: cfg.margin,
            confidence: cfg.confidence,
            norm_cap: if w2 > 0.0 { 1.0 / w2 } else { f64::MAX },
            n_train: n,
            kernel_trace_over_n: trace,
        };
        worst = worst.max(generalization_bound(&b)?);
    }
    Ok(worst)
}

/// Fits one model at `lambda` and returns its row and the model.
pub fn evaluate_lambda(cfg: &ExperimentConfig, cell: &FeatureCell, lambda: f64, reff: f64, trace: f64) -> Result<(MetricsRow, OvrModel)> {
    let model = ovr_fit(&cell.train, &cell.train_labels, &cfg.classes, lambda, cell.layout, cfg.centered)?;
    let train_scores = ovr_scores(&model, &cell.train, cell.layout)?;
    let test_scores = ovr_scores(&model, &cell.test, cell.layout)?;
    let train = ovr_metrics(&model.classes, &train_scores, &cell.train_labels, cfg.margin)?;
    let test = ovr_metrics(&model.classes, &test_scores, &cell.test_labels, cfg.margin)?;
    let row = MetricsRow {
        seed: cell.disorder_seed,
        gamma: cell.gamma,
        lambda,
        train_risk: train.risk,
        test_risk: test.risk,
        margin_risk: train.margin_risk,
        reff,
        bound: bound_for(&model, cfg, cell.train.nrows(), trace)?,
    };
    Ok((row, model))
}

/// All rows of one cell over the regularization grid, plus the model at the
/// test-risk minimizer (ties go to the smallest lambda).
pub fn train_eval_cell(cfg: &ExperimentConfig, cell: &FeatureCell) -> Result<(Vec<MetricsRow>, usize, OvrModel)> {
    let reff = cell_effective_rank(cell)?;
    let trace = centered_trace_over_n(&cell.train);
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    let fits = lambdas
        .iter()
        .map(|&l| evaluate_lambda(cfg, cell, l, reff, trace))
        .collect::<Result<Vec<_>>>()?;
    let best = best_row(fits.iter().map(|f| &f.0));
    let model = fits[best].1.clone();
    Ok((fits.into_iter().map(|f| f.0).collect(), best, model))
}

/// Index of the smallest test risk; ties go to the first row.
pub fn best_row<'a>(rows: impl Iterator<Item = &'a MetricsRow>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, r) in rows.enumerate() {
        if r.test_risk < best.1 {
            best = (i, r.test_risk);
        }
    }
    best.0
}

/// Bootstrap over disorder seeds for each `(gamma, lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub gamma: f64,
    pub lambda: f64,
    pub mean_train_risk: f64,
    pub std_train_risk: f64,
    pub mean_test_risk: f64,
    pub std_test_risk: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Draws `sets` resamples of `set_size` seeds with replacement (the same draws
/// for every lambda of a gamma) and reports the mean and spread of the set averages.
pub fn bootstrap(rows: &[MetricsRow], b: &BootstrapConfig) -> Vec<BootstrapRow> {
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let mut out = Vec::new();
    for (gi, &g) in gammas.iter().enumerate() {
        let mut seeds: Vec<u64> = rows.iter().filter(|r| r.gamma == g).map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
        rng.set_stream(gi as u64);
        let draws: Vec<Vec<u64>> = (0..b.sets)
            .map(|_| (0..b.set_size).map(|_| seeds[rng.random_range(0..seeds.len())]).collect())
            .collect();
        let mut lambdas: Vec<f64> = rows.iter().filter(|r| r.gamma == g).map(|r| r.lambda).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        for &l in &lambdas {
            let lookup = |s: u64| rows.iter().find(|r| r.gamma == g && r.lambda == l && r.seed == s);
            let set_means = |f: fn(&MetricsRow) -> f64| -> Vec<f64> {
                draws
                    .iter()
                    .map(|d| d.iter().filter_map(|&s| lookup(s)).map(f).sum::<f64>() / d.len() as f64)
                    .collect()
            };
            let (mean_train_risk, std_train_risk) = mean_std(&set_means(|r| r.train_risk));
            let (mean_test_risk, std_test_risk) = mean_std(&set_means(|r| r.test_risk));
            out.push(BootstrapRow { gamma: g, lambda: l, mean_train_risk, std_train_risk, mean_test_risk, std_test_risk });
        }
    }
    out
}

/// Kernel diagnostics of one cell's training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub seed: u64,
    pub gamma: f64,
    pub n_train: usize,
    pub layout: FeatureLayout,
    pub reff: f64,
    /// `Tr[K_c] / n` in feature units.
    pub trace_over_n: f64,
    /// Kernel-target alignment with each class's one-vs-rest targets.
    pub alignment: Vec<f64>,
    pub mean_alignment: f64,
    /// `|Tr[K_c] / (n 2^N) - (mean purity - purity of mean)|`; only defined
    /// for noise-free tomography features.
    pub purity_residual: Option<f64>,
    pub mean_purity: f64,
    /// Bound at the configured margin, confidence and `Lambda`.
    pub bound: f64,
    pub spectrum: Vec<f64>,
}

pub fn kernel_report(cfg: &ExperimentConfig, cell: &FeatureCell) -> Result<KernelReport> {
    let kc = center_kernel(&gram(&cell.train)?)?;
    let sp = spectrum(&kc)?;
    let reff = effective_rank(&sp)?;
    let n = cell.train.nrows();
    let trace_over_n = kc.trace() / n as f64;
    let alignment = cfg
        .classes
        .iter()
        .map(|&c| alignment(&kc, &one_vs_rest_targets(&cell.train_labels, c)))
        .collect::<Result<Vec<_>>>()?;
    let purity_residual = match cell.layout {
        FeatureLayout::Tomography { n_sites } if cell.noise_sigma == 0.0 => {
            let lhs = trace_over_n / (1u64 << n_sites) as f64;
            Some((lhs - (cell.mean_purity() - cell.purity_of_mean)).abs())
        }
        _ => None,
    };
    let bound = generalization_bound(&BoundInputs {
        margin: cfg.margin,
        confidence: cfg.confidence,
        norm_cap: cfg.norm_cap,
        n_train: n,
        kernel_trace_over_n: trace_over_n,
    })?;
    Ok(KernelReport {
        seed: cell.disorder_seed,
        gamma: cell.gamma,
        n_train: n,
        layout: cell.layout,
        reff,
        trace_over_n,
        mean_alignment: alignment.iter().sum::<f64>() / alignment.len() as f64,
        alignment,
        purity_residual,
        mean_purity: cell.mean_purity(),
        bound,
        spectrum: sp.eigenvalues,
    })
}

/// Mean entropy and negativity of the encoding trajectories at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub gamma: f64,
    pub t: f64,
    pub entropy: f64,
    pub negativity: f64,
}

/// Step refinement for diagnostics, so that RK4 leakage into the null space of
/// a pure state stays below the entropy resolution.
pub const DIAGNOSTIC_STEP_SCALE: f64 = 0.25;

/// Largest chain the diagnostics accept.
pub const MAX_DIAGNOSTIC_SITES: usize = 5;

/// Samples every `dt` over `[0, horizon * tau]`, averaging over the first
/// `n_inputs` training inputs and all disorder seeds.
pub fn diagnostics(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Vec<DiagnosticsRow>> {
    if cfg.n_sites > MAX_DIAGNOSTIC_SITES {
        return Err(Error::InvalidInput(format!(
            "diagnostics are limited to N <= {MAX_DIAGNOSTIC_SITES}, got {}",
            cfg.n_sites
        )));
    }
    let d = cfg.diagnostics;
    let inputs = &data.train_inputs()[..d.n_inputs.min(data.n_train)];
    let tau = DriveSchedule::for_mode(&inputs[0], cfg.n_sites, cfg.encoding)?.end_time();
    let steps = (d.horizon * tau / d.dt).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * d.dt).collect();
    let mut rows = Vec::new();
    for &gamma in &cfg.gammas {
        let jobs: Vec<(u64, &Vec<f64>)> = cfg.disorder_seeds.iter().flat_map(|&s| inputs.iter().map(move |x| (s, x))).collect();
        let traces = jobs
            .par_iter()
            .map(|&(seed, x)| {
                let params = sample_disorder(cfg.n_sites, seed)?.with_dephasing(gamma);
                let enc = Encoder::new(&params, cfg.encoding, cfg.step_policy.scaled(DIAGNOSTIC_STEP_SCALE))?;
                enc.trajectory(x, &times)?
                    .iter()
                    .map(|s| Ok((von_neumann_entropy(s)?, mean_site_negativity(s)?)))
                    .collect::<Result<Vec<(f64, f64)>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let m = traces.len() as f64;
        for (k, &t) in times.iter().enumerate() {
            let entropy = traces.iter().map(|tr| tr[k].0).sum::<f64>() / m;
            let negativity = traces.iter().map(|tr| tr[k].1).sum::<f64>() / m;
            rows.push(DiagnosticsRow { gamma, t, entropy, negativity });
        }
    }
    Ok(rows)
}
