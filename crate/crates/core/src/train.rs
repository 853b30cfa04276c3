//! Closed-form least-squares training and risk metrics.
//!
//! Loss: `(1/n) sum_i (w . phi_i + b - y_i)^2 + lambda ||w||^2`. The plain fit
//! has no separate intercept (the constant feature plays that role and is
//! regularized like any other weight); the centered fit keeps `b` free.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::FeatureLayout;
use crate::error::{Error, Result};
use crate::kernel::center_features;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub reg: f64,
    /// Training feature means (zero for the plain fit).
    pub feature_means: Vec<f64>,
    pub layout: FeatureLayout,
}

impl TrainedModel {
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

fn check_problem(features: &DMatrix<f64>, labels: &[f64], reg: f64, layout: FeatureLayout) -> Result<()> {
    let (n, p) = features.shape();
    if n == 0 {
        return Err(Error::invalid("no training samples"));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} samples but {} labels", labels.len())));
    }
    if p != layout.len() {
        return Err(Error::LayoutMismatch {
            expected: format!("{layout} ({} columns)", layout.len()),
            found: format!("{p} columns"),
        });
    }
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(Error::invalid(format!("regularization must be finite and >= 0, got {reg}")));
    }
    if features.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training data".into()));
    }
    Ok(())
}

fn singular(reg: f64) -> Error {
    if reg == 0.0 {
        Error::Singular("feature Gram matrix is rank deficient at lambda = 0; use lambda > 0".into())
    } else {
        Error::Singular(format!("regularized system is not positive definite at lambda = {reg:e}"))
    }
}

/// Which normal equations a ridge solve uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveForm {
    /// `(F^T F + n lambda I) w = F^T y`, size `P`.
    Primal,
    /// `w = F^T (F F^T + n lambda I)^{-1} y`, size `n`.
    Dual,
}

/// A ridge problem with its Gram matrix cached, for sweeping `lambda`.
#[derive(Clone, Debug)]
pub struct RidgeProblem {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    form: SolveForm,
    gram: DMatrix<f64>,
}

impl RidgeProblem {
    /// Picks the primal form when `P <= n`, the dual otherwise.
    pub fn new(features: DMatrix<f64>, labels: &[f64]) -> Self {
        let form = if features.ncols() <= features.nrows() { SolveForm::Primal } else { SolveForm::Dual };
        Self::with_form(features, labels, form)
    }

    pub fn with_form(features: DMatrix<f64>, labels: &[f64], form: SolveForm) -> Self {
        let gram = match form {
            SolveForm::Primal => features.transpose() * &features,
            SolveForm::Dual => &features * features.transpose(),
        };
        RidgeProblem {
            labels: DVector::from_column_slice(labels),
            features,
            form,
            gram,
        }
    }

    pub fn solve(&self, reg: f64) -> Result<DVector<f64>> {
        let n = self.features.nrows() as f64;
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += n * reg;
        }
        let chol = a.cholesky().ok_or_else(|| singular(reg))?;
        let w = match self.form {
            SolveForm::Primal => chol.solve(&(self.features.transpose() * &self.labels)),
            SolveForm::Dual => self.features.transpose() * chol.solve(&self.labels),
        };
        if w.iter().any(|v| !v.is_finite()) {
            return Err(singular(reg));
        }
        Ok(w)
    }
}

/// `w* = (Phi Phi^T + n lambda I)^{-1} Phi y` on the raw features, no intercept.
pub fn fit(features: &DMatrix<f64>, labels: &[f64], reg: f64, layout: FeatureLayout) -> Result<TrainedModel> {
    check_problem(features, labels, reg, layout)?;
    let w = RidgeProblem::new(features.clone(), labels).solve(reg)?;
    Ok(TrainedModel {
        weights: w.iter().copied().collect(),
        intercept: 0.0,
        reg,
        feature_means: vec![0.0; features.ncols()],
        layout,
    })
}

/// Centers features and labels, solves the ridge problem and restores the
/// intercept as `b = mean(y) - w . mean(phi)`.
pub fn fit_centered(features: &DMatrix<f64>, labels: &[f64], reg: f64, layout: FeatureLayout) -> Result<TrainedModel> {
    check_problem(features, labels, reg, layout)?;
    let n = labels.len();
    let (fc, means) = if n >= 2 {
        center_features(features)?
    } else {
        (DMatrix::zeros(1, features.ncols()), features.row(0).transpose())
    };
    let y_mean = labels.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = labels.iter().map(|y| y - y_mean).collect();
    let w = if fc.iter().all(|&v| v == 0.0) {
        DVector::zeros(features.ncols())
    } else {
        RidgeProblem::new(fc, &yc).solve(reg)?
    };
    Ok(TrainedModel {
        intercept: y_mean - w.dot(&means),
        weights: w.iter().copied().collect(),
        reg,
        feature_means: means.iter().copied().collect(),
        layout,
    })
}

/// Joint solve for `(w, b)` with an unregularized intercept.
pub fn fit_unregularized_intercept(features: &DMatrix<f64>, labels: &[f64], reg: f64, layout: FeatureLayout) -> Result<TrainedModel> {
    check_problem(features, labels, reg, layout)?;
    let (n, p) = features.shape();
    let ones = DVector::from_element(n, 1.0);
    let y = DVector::from_column_slice(labels);
    let mut a = DMatrix::zeros(p + 1, p + 1);
    let ftf = features.transpose() * features;
    a.view_mut((0, 0), (p, p)).copy_from(&ftf);
    for i in 0..p {
        a[(i, i)] += n as f64 * reg;
    }
    let col_sums = features.transpose() * &ones;
    a.view_mut((0, p), (p, 1)).copy_from(&col_sums);
    a.view_mut((p, 0), (1, p)).copy_from(&col_sums.transpose());
    a[(p, p)] = n as f64;
    let mut rhs = DVector::zeros(p + 1);
    rhs.rows_mut(0, p).copy_from(&(features.transpose() * &y));
    rhs[p] = y.sum();
    let sol = a.lu().solve(&rhs).ok_or_else(|| singular(reg))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(singular(reg));
    }
    Ok(TrainedModel {
        weights: sol.rows(0, p).iter().copied().collect(),
        intercept: sol[p],
        reg,
        feature_means: vec![0.0; p],
        layout,
    })
}

/// Affine scores `w . phi + b`, one per row.
pub fn predict(model: &TrainedModel, features: &DMatrix<f64>, layout: FeatureLayout) -> Result<Vec<f64>> {
    if layout != model.layout || features.ncols() != model.weights.len() {
        return Err(Error::LayoutMismatch {
            expected: model.layout.to_string(),
            found: format!("{layout} with {} columns", features.ncols()),
        });
    }
    let w = DVector::from_column_slice(&model.weights);
    Ok((features * w).iter().map(|s| s + model.intercept).collect())
}

/// `+1` for scores `>= 0`, else `-1`.
pub fn classify(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One binary model per class, trained on `+1` (this class) vs `-1` (rest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    /// Ascending class labels.
    pub classes: Vec<u8>,
    pub models: Vec<TrainedModel>,
}

pub fn one_vs_rest_targets(labels: &[u8], class: u8) -> Vec<f64> {
    labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect()
}

/// Fits one classifier per entry of `classes`; every class must appear in `labels`.
pub fn ovr_fit(
    features: &DMatrix<f64>,
    labels: &[u8],
    classes: &[u8],
    reg: f64,
    layout: FeatureLayout,
    centered: bool,
) -> Result<OvrModel> {
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("one-vs-rest needs at least two classes"));
    }
    if let Some(c) = classes.iter().find(|c| !labels.contains(c)) {
        return Err(Error::invalid(format!("class {c} has no training samples")));
    }
    if let Some(l) = labels.iter().find(|l| !classes.contains(l)) {
        return Err(Error::invalid(format!("label {l} is not one of the classes {classes:?}")));
    }
    let models = classes
        .par_iter()
        .map(|&c| {
            let y = one_vs_rest_targets(labels, c);
            if centered {
                fit_centered(features, &y, reg, layout)
            } else {
                fit(features, &y, reg, layout)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvrModel { classes, models })
}

/// Score matrix `n x classes`.
pub fn ovr_scores(model: &OvrModel, features: &DMatrix<f64>, layout: FeatureLayout) -> Result<DMatrix<f64>> {
    let cols = model
        .models
        .iter()
        .map(|m| predict(m, features, layout))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(features.nrows(), cols.len(), |i, c| cols[c][i]))
}

/// Index of the largest entry; ties go to the earliest (smallest label).
pub fn argmax_row(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn ovr_predict_from_scores(classes: &[u8], scores: &DMatrix<f64>) -> Vec<u8> {
    scores
        .row_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().copied().collect();
            classes[argmax_row(&v)]
        })
        .collect()
}

pub fn ovr_predict(model: &OvrModel, features: &DMatrix<f64>, layout: FeatureLayout) -> Result<Vec<u8>> {
    Ok(ovr_predict_from_scores(&model.classes, &ovr_scores(model, features, layout)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub risk: f64,
    pub margin_risk: f64,
}

/// `Phi_eta(u)`: 1 for `u <= 0`, `1 - u / eta` on `(0, eta]`, 0 beyond.
pub fn margin_loss(u: f64, eta: f64) -> f64 {
    if u <= 0.0 {
        1.0
    } else if u <= eta {
        1.0 - u / eta
    } else {
        0.0
    }
}

fn metrics_from(correct: impl Iterator<Item = bool>, margins: &[f64], eta: f64) -> Result<Metrics> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("margin must be > 0, got {eta}")));
    }
    if margins.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    let n = margins.len() as f64;
    let accuracy = correct.filter(|&c| c).count() as f64 / n;
    let margin_risk = margins.iter().map(|&u| margin_loss(u, eta)).sum::<f64>() / n;
    Ok(Metrics {
        accuracy,
        risk: 1.0 - accuracy,
        margin_risk,
    })
}

/// Binary metrics with `y f >= 0` counted as correct.
pub fn metrics(scores: &[f64], labels: &[f64], eta: f64) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let margins: Vec<f64> = scores.iter().zip(labels).map(|(f, y)| f * y).collect();
    metrics_from(margins.iter().map(|&u| u >= 0.0), &margins, eta)
}

/// Multiclass margins `f_y - max_{c != y} f_c`.
pub fn multiclass_margins(classes: &[u8], scores: &DMatrix<f64>, labels: &[u8]) -> Result<Vec<f64>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let c = classes
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::invalid(format!("label {l} not among classes {classes:?}")))?;
            let other = (0..classes.len())
                .filter(|&k| k != c)
                .map(|k| scores[(i, k)])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(scores[(i, c)] - other)
        })
        .collect()
}

/// Multiclass metrics: accuracy from the argmax prediction, margin risk from
/// [`multiclass_margins`].
pub fn ovr_metrics(classes: &[u8], scores: &DMatrix<f64>, labels: &[u8], eta: f64) -> Result<Metrics> {
    if scores.nrows() != labels.len() || scores.ncols() != classes.len() {
        return Err(Error::invalid("score matrix does not match labels and classes"));
    }
    let margins = multiclass_margins(classes, scores, labels)?;
    let preds = ovr_predict_from_scores(classes, scores);
    metrics_from(preds.iter().zip(labels).map(|(p, l)| p == l), &margins, eta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCheckReport {
    pub n_draws: usize,
    /// Average weights over the noisy fits at `lambda`.
    pub mean_weights: Vec<f64>,
    /// Clean fit at `lambda + sigma^2`.
    pub reference_weights: Vec<f64>,
    /// Per-weight Monte Carlo standard errors.
    pub standard_errors: Vec<f64>,
    pub max_deviation: f64,
    /// Largest `|mean - reference| / standard error` over the weights.
    pub max_z: f64,
}

/// Compares the average of noisy-feature fits with the clean `lambda + sigma^2` fit.
/// Noise with variance `sigma^2` is added to every feature entry.
pub fn noise_regularization_check(
    features: &DMatrix<f64>,
    labels: &[f64],
    reg: f64,
    sigma: f64,
    n_draws: usize,
    seed: u64,
) -> Result<NoiseCheckReport> {
    if n_draws < 2 {
        return Err(Error::invalid("need at least two noise draws"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise width must be >= 0, got {sigma}")));
    }
    let layout = FeatureLayout::Raw { dim: features.ncols() };
    let reference = fit(features, labels, reg + sigma * sigma, layout)?;
    let p = features.ncols();
    let draws = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            let noisy = features.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
            fit(&noisy, labels, reg, layout).map(|m| m.weights)
        })
        .collect::<Result<Vec<_>>>()?;
    let nd = n_draws as f64;
    let mean: Vec<f64> = (0..p).map(|j| draws.iter().map(|w| w[j]).sum::<f64>() / nd).collect();
    let se: Vec<f64> = (0..p)
        .map(|j| {
            let var = draws.iter().map(|w| (w[j] - mean[j]).powi(2)).sum::<f64>() / (nd - 1.0);
            (var / nd).sqrt()
        })
        .collect();
    let dev: Vec<f64> = mean.iter().zip(&reference.weights).map(|(a, b)| (a - b).abs()).collect();
    let max_deviation = dev.iter().copied().fold(0.0, f64::max);
    let max_z = dev
        .iter()
        .zip(&se)
        .map(|(d, s)| if *s > 0.0 { d / s } else if *d == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(NoiseCheckReport {
        n_draws,
        mean_weights: mean,
        reference_weights: reference.weights,
        standard_errors: se,
        max_deviation,
        max_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn raw(p: usize) -> FeatureLayout {
        FeatureLayout::Raw { dim: p }
    }

    fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        (f, y)
    }

    fn loss(f: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, reg: f64) -> f64 {
        let n = y.len() as f64;
        let r = f * w - DVector::from_column_slice(y);
        r.iter().map(|v| (v + b) * (v + b)).sum::<f64>() / n + reg * w.norm_squared()
    }

    /// Plain gradient descent on the regularized loss.
    fn gradient_descent(f: &DMatrix<f64>, y: &[f64], reg: f64) -> DVector<f64> {
        let n = y.len() as f64;
        let yv = DVector::from_column_slice(y);
        let h = (f.transpose() * f) * (2.0 / n) + DMatrix::identity(f.ncols(), f.ncols()) * (2.0 * reg);
        let lmax = h.clone().symmetric_eigenvalues().max();
        let mut w = DVector::zeros(f.ncols());
        for _ in 0..200_000 {
            let g = (f.transpose() * (f * &w - &yv)) * (2.0 / n) + &w * (2.0 * reg);
            if g.norm() < 1e-13 {
                break;
            }
            w -= g / lmax;
        }
        w
    }

    #[test]
    fn diagonal_example() {
        let m = fit(&DMatrix::identity(2, 2), &[1.0, -1.0], 0.5, raw(2)).unwrap();
        assert_abs_diff_eq!(m.weights[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.weights[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn huge_regularization_shrinks_to_zero() {
        let (f, y) = random_problem(10, 3, 1);
        let m = fit(&f, &y, 1e12, raw(3)).unwrap();
        assert!(m.weight_norm_sq().sqrt() < 1e-11);
    }

    #[test]
    fn matches_gradient_descent() {
        let (f, y) = random_problem(20, 6, 2);
        let m = fit(&f, &y, 0.05, raw(6)).unwrap();
        let gd = gradient_descent(&f, &y, 0.05);
        for (a, b) in m.weights.iter().zip(gd.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn primal_and_dual_agree() {
        for (n, p) in [(8, 20), (30, 5)] {
            let (f, y) = random_problem(n, p, 3);
            let a = RidgeProblem::with_form(f.clone(), &y, SolveForm::Primal).solve(1e-3).unwrap();
            let b = RidgeProblem::with_form(f, &y, SolveForm::Dual).solve(1e-3).unwrap();
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_at_zero_reg_is_rejected() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let err = fit(&f, &[1.0, -1.0, 1.0], 0.0, raw(2)).unwrap_err();
        assert!(matches!(err, Error::Singular(ref m) if m.contains("lambda > 0")), "{err}");
        assert!(fit(&f, &[1.0, -1.0, 1.0], 1e-3, raw(2)).is_ok());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (f, y) = random_problem(6, 4, 4);
        let m = fit(&f, &y, 0.1, raw(4)).unwrap();
        assert!(matches!(predict(&m, &f, FeatureLayout::Tomography { n_sites: 1 }), Err(Error::LayoutMismatch { .. })));
        assert!(predict(&m, &DMatrix::zeros(2, 3), raw(3)).is_err());
        assert!(fit(&f, &y, 0.1, raw(5)).is_err());
    }

    #[test]
    fn centered_fit_equals_unregularized_intercept() {
        let (mut f, _) = random_problem(24, 5, 5);
        let y: Vec<f64> = (0..24).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (fc, _) = center_features(&f).unwrap();
        let a = fit_centered(&fc, &y, 0.02, raw(5)).unwrap();
        let b = fit_unregularized_intercept(&fc, &y, 0.02, raw(5)).unwrap();
        let (sa, sb) = (predict(&a, &fc, raw(5)).unwrap(), predict(&b, &fc, raw(5)).unwrap());
        for (x, z) in sa.iter().zip(&sb) {
            assert_abs_diff_eq!(*x, *z, epsilon = 1e-9);
        }
        let shift = [3.0, -1.0, 0.5, 2.0, 7.0];
        for mut row in f.row_iter_mut() {
            row += DVector::from_row_slice(&shift).transpose();
        }
        let m = fit_centered(&f, &y, 0.02, raw(5)).unwrap();
        for (x, z) in predict(&m, &f, raw(5)).unwrap().iter().zip(&sa) {
            assert_abs_diff_eq!(*x, *z, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_features_give_mean_label() {
        let f = DMatrix::from_element(5, 3, 0.7);
        let y = [1.0, 1.0, -1.0, 1.0, -1.0];
        let m = fit_centered(&f, &y, 0.1, raw(3)).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_abs_diff_eq!(m.intercept, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let m = TrainedModel {
            weights: vec![0.0; 2],
            intercept: 0.3,
            reg: 0.0,
            feature_means: vec![0.0; 2],
            layout: raw(2),
        };
        let s = predict(&m, &DMatrix::from_element(3, 2, 5.0), raw(2)).unwrap();
        assert!(s.iter().all(|&v| v == 0.3 && classify(v) == 1.0));
        assert_eq!(classify(0.0), 1.0);
        assert_eq!(classify(-1e-300), -1.0);
    }

    #[test]
    fn interpolation_classifies_training_points() {
        let (f, y) = random_problem(6, 10, 6);
        let m = fit(&f, &y, 0.0, raw(10)).unwrap();
        let s = predict(&m, &f, raw(10)).unwrap();
        for (si, yi) in s.iter().zip(&y) {
            assert_eq!(classify(*si), *yi);
            assert_abs_diff_eq!(*si, *yi, epsilon = 1e-9);
        }
    }

    #[test]
    fn ovr_argmax_example_and_ties() {
        let scores = DMatrix::from_row_slice(2, 3, &[-0.3, -0.2, 0.9, 0.5, 0.5, 0.1]);
        assert_eq!(ovr_predict_from_scores(&[3, 6, 8], &scores), vec![8, 3]);
        assert_eq!(ovr_predict_from_scores(&[3, 6, 8], &(scores * 4.2)), vec![8, 3]);
    }

    #[test]
    fn ovr_interpolates_one_point_per_class() {
        let f = DMatrix::from_row_slice(3, 4, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.7, 0.0, 1.0, 0.0, 0.0, -0.4]);
        let labels = [3, 6, 8];
        let m = ovr_fit(&f, &labels, &[3, 6, 8], 1e-12, raw(4), false).unwrap();
        assert_eq!(ovr_predict(&m, &f, raw(4)).unwrap(), labels.to_vec());
        assert!(ovr_fit(&f, &[3, 3, 8], &[3, 6, 8], 0.1, raw(4), false).is_err());
        assert!(ovr_fit(&f, &[3, 3, 3], &[3], 0.1, raw(4), false).is_err());
    }

    #[test]
    fn two_class_ovr_matches_binary() {
        let (f, y) = random_problem(30, 4, 7);
        let labels: Vec<u8> = y.iter().map(|&v| if v > 0.0 { 6 } else { 3 }).collect();
        let ovr = ovr_fit(&f, &labels, &[3, 6], 0.01, raw(4), true).unwrap();
        let bin = fit_centered(&f, &one_vs_rest_targets(&labels, 6), 0.01, raw(4)).unwrap();
        let pred = ovr_predict(&ovr, &f, raw(4)).unwrap();
        let s = predict(&bin, &f, raw(4)).unwrap();
        for (p, si) in pred.iter().zip(&s) {
            assert_eq!(*p, if classify(*si) > 0.0 { 6 } else { 3 });
        }
    }

    #[test]
    fn margin_loss_branches() {
        let m = metrics(&[2.0, -3.0], &[1.0, -1.0], 1.0).unwrap();
        assert_eq!((m.accuracy, m.margin_risk), (1.0, 0.0));
        let m = metrics(&[-2.0, 0.0], &[1.0, -1.0], 1.0).unwrap();
        assert_eq!(m.margin_risk, 1.0);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(margin_loss(0.25, 0.5), 0.5);
        assert!(metrics(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn noise_check_zero_sigma_is_exact() {
        let (f, y) = random_problem(12, 3, 8);
        let r = noise_regularization_check(&f, &y, 0.05, 0.0, 100, 1).unwrap();
        assert!(r.max_deviation < 1e-15);
    }

    #[test]
    fn noise_check_agrees_with_shifted_regularization() {
        let (f, y) = random_problem(40, 6, 9);
        let r = noise_regularization_check(&f, &y, 0.01, 0.05, 500, 2).unwrap();
        assert!(r.max_z <= 3.0, "{r:?}");
    }

    #[test]
    fn noise_check_standard_error_shrinks() {
        let (f, y) = random_problem(40, 6, 10);
        let a = noise_regularization_check(&f, &y, 0.01, 0.05, 100, 3).unwrap();
        let b = noise_regularization_check(&f, &y, 0.01, 0.05, 400, 3).unwrap();
        let ratio = a.standard_errors.iter().sum::<f64>() / b.standard_errors.iter().sum::<f64>();
        assert!((1.0..=4.0).contains(&ratio), "{ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn closed_form_is_first_order_optimal(seed in 0u64..10_000, reg in 1e-4f64..1.0) {
            let (f, y) = random_problem(15, 4, seed);
            let w = DVector::from_vec(fit(&f, &y, reg, raw(4)).unwrap().weights);
            let base = loss(&f, &y, &w, 0.0, reg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
            for _ in 0..5 {
                let d = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
                prop_assert!(loss(&f, &y, &(&w + d * 1e-4), 0.0, reg) >= base - 1e-14);
            }
        }

        #[test]
        fn fit_is_continuous_in_reg(seed in 0u64..10_000, reg in 1e-3f64..1.0) {
            let (f, y) = random_problem(12, 5, seed);
            let a = DVector::from_vec(fit(&f, &y, reg, raw(5)).unwrap().weights);
            let b = DVector::from_vec(fit(&f, &y, reg + 1e-9, raw(5)).unwrap().weights);
            prop_assert!((a - b).norm() < 1e-5);
        }

        #[test]
        fn risk_sandwich(seed in 0u64..10_000, eta in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..30).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let m = metrics(&s, &y, eta).unwrap();
            let upper = s.iter().zip(&y).filter(|(a, b)| *a * *b <= eta).count() as f64 / 30.0;
            prop_assert!(m.risk <= m.margin_risk + 1e-15 && m.margin_risk <= upper + 1e-15);
        }

        #[test]
        fn multiclass_risk_sandwich(seed in 0u64..10_000, eta in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores = DMatrix::from_fn(25, 3, |_, _| rng.random_range(-1.0..1.0));
            let labels: Vec<u8> = (0..25).map(|_| [3u8, 6, 8][rng.random_range(0..3)]).collect();
            let m = ovr_metrics(&[3, 6, 8], &scores, &labels, eta).unwrap();
            let margins = multiclass_margins(&[3, 6, 8], &scores, &labels).unwrap();
            let upper = margins.iter().filter(|&&u| u <= eta).count() as f64 / 25.0;
            prop_assert!(m.risk <= m.margin_risk + 1e-15 && m.margin_risk <= upper + 1e-15);
        }
    }
}
