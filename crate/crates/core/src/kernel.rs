//! Feature kernels and their diagnostics.
//!
//! Eigenvalues follow the empirical convention `eig(K) / n` throughout.
//! Tomography features carry a factor `2^N` relative to the state overlap,
//! `K_ij = 2^N Tr[rho_i rho_j]`; the purity identity divides it out.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decode::tomography_features;
use crate::error::{Error, Result};
use crate::qcore::{purity, DensityMatrix};

const SYMMETRY_TOL: f64 = 1e-10;
const CLAMP_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    data: DMatrix<f64>,
    centered: bool,
}

impl KernelMatrix {
    pub fn new(data: DMatrix<f64>, centered: bool) -> Result<Self> {
        if !data.is_square() || data.nrows() == 0 {
            return Err(Error::invalid(format!("kernel must be a non-empty square matrix, got {:?}", data.shape())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("kernel has non-finite entries".into()));
        }
        let asym = (&data - data.transpose()).amax();
        if asym > SYMMETRY_TOL * data.amax().max(1.0) {
            return Err(Error::Numerical(format!("kernel asymmetric by {asym:.3e}")));
        }
        Ok(KernelMatrix { data, centered })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }
}

/// `K = F F^T` with one feature vector per row of `features`.
pub fn gram(features: &DMatrix<f64>) -> Result<KernelMatrix> {
    if features.nrows() == 0 {
        return Err(Error::invalid("gram needs at least one feature row"));
    }
    let k = features * features.transpose();
    KernelMatrix::new((&k + k.transpose()) * 0.5, false)
}

/// Column means of `features`.
pub fn feature_means(features: &DMatrix<f64>) -> DVector<f64> {
    features.row_mean().transpose()
}

/// Subtracts column means; returns the centered matrix and the means.
pub fn center_features(features: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if features.nrows() < 2 {
        return Err(Error::invalid("centering needs at least two samples"));
    }
    let means = feature_means(features);
    let mut out = features.clone();
    for mut row in out.row_iter_mut() {
        row -= means.transpose();
    }
    Ok((out, means))
}

/// Double centering `H K H` with `H = I - 11^T / n`.
pub fn center_kernel(k: &KernelMatrix) -> Result<KernelMatrix> {
    let n = k.n();
    if n < 2 {
        return Err(Error::invalid("centering needs at least two samples"));
    }
    let d = k.data();
    let row_means = d.column_mean();
    let col_means = d.row_mean();
    let all = d.mean();
    let c = DMatrix::from_fn(n, n, |i, j| d[(i, j)] - row_means[i] - col_means[j] + all);
    KernelMatrix::new((&c + c.transpose()) * 0.5, true)
}

/// Descending empirical eigenvalues `eig(K) / n` and matching eigenvectors.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl KernelSpectrum {
    /// Builds a spectrum from given eigenvalues (eigenvectors left as identity).
    pub fn from_eigenvalues(values: &[f64]) -> Result<Self> {
        let mut v = values.to_vec();
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("spectrum values must be finite and non-negative"));
        }
        v.sort_by(|a, b| b.total_cmp(a));
        let n = v.len();
        Ok(KernelSpectrum {
            eigenvalues: v,
            eigenvectors: DMatrix::identity(n, n),
        })
    }

    pub fn n_nonzero(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v > 0.0).count()
    }
}

pub fn spectrum(k: &KernelMatrix) -> Result<KernelSpectrum> {
    let n = k.n() as f64;
    let eig = nalgebra::SymmetricEigen::try_new(k.data().clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = (eig.eigenvalues[order[0]] / n).max(1.0);
    let mut eigenvalues = Vec::with_capacity(order.len());
    for &i in &order {
        let v = eig.eigenvalues[i] / n;
        if v < 0.0 {
            if v < -CLAMP_TOL * top {
                return Err(Error::Numerical(format!("kernel has negative eigenvalue {v:.3e}")));
            }
            eigenvalues.push(0.0);
        } else {
            eigenvalues.push(v);
        }
    }
    let eigenvectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(KernelSpectrum { eigenvalues, eigenvectors })
}

/// `R_eff = (sum l)^2 / sum l^2`.
pub fn effective_rank(sp: &KernelSpectrum) -> Result<f64> {
    let s: f64 = sp.eigenvalues.iter().sum();
    let s2: f64 = sp.eigenvalues.iter().map(|v| v * v).sum();
    if !(s > 0.0) || !(s2 > 0.0) {
        return Err(Error::DegenerateKernel("all eigenvalues are zero".into()));
    }
    Ok(s * s / s2)
}

/// `R_eff = Tr[K]^2 / Tr[K^2]` without an eigendecomposition.
pub fn effective_rank_empirical(kc: &KernelMatrix) -> Result<f64> {
    let tr = kc.trace();
    let tr2 = kc.data().norm_squared();
    if !(tr2 > 0.0) || !(tr > 0.0) {
        return Err(Error::DegenerateKernel("kernel is zero".into()));
    }
    Ok(tr * tr / tr2)
}

fn check_labels(n: usize, labels: &[f64]) -> Result<DVector<f64>> {
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for a kernel of size {n}", labels.len())));
    }
    let y = DVector::from_column_slice(labels);
    if !(y.norm_squared() > 0.0) {
        return Err(Error::invalid("labels are all zero"));
    }
    Ok(y)
}

/// Kernel-target alignment `(y^T K y / n^2) / (sqrt(Tr[K^2] / n^2) * y^T y / n)`.
pub fn alignment(kc: &KernelMatrix, labels: &[f64]) -> Result<f64> {
    let n = kc.n() as f64;
    let y = check_labels(kc.n(), labels)?;
    let frob = kc.data().norm();
    if !(frob > 0.0) {
        return Err(Error::DegenerateKernel("kernel is zero".into()));
    }
    let num = (y.transpose() * kc.data() * &y)[(0, 0)] / (n * n);
    Ok(num / (frob / n * y.norm_squared() / n))
}

/// Alignment from the spectrum: `sum l_i <psi_i, y>^2 / (sqrt(sum l_i^2) y^T y)`.
pub fn alignment_spectral(sp: &KernelSpectrum, labels: &[f64]) -> Result<f64> {
    let y = check_labels(sp.eigenvectors.nrows(), labels)?;
    let s2: f64 = sp.eigenvalues.iter().map(|v| v * v).sum();
    if !(s2 > 0.0) {
        return Err(Error::DegenerateKernel("all eigenvalues are zero".into()));
    }
    let num: f64 = sp
        .eigenvalues
        .iter()
        .zip(sp.eigenvectors.column_iter())
        .map(|(l, psi)| l * psi.dot(&y).powi(2))
        .sum();
    Ok(num / (s2.sqrt() * y.norm_squared()))
}

/// `(Tr[K_c] / n / 2^N, mean purity - purity of the mean state)` from
/// tomography features. The two agree for any batch.
pub fn purity_trace_identity(states: &[DensityMatrix]) -> Result<(f64, f64)> {
    if states.len() < 2 {
        return Err(Error::invalid("purity identity needs at least two states"));
    }
    let n = states.len();
    let dim = states[0].dim();
    let rows = states
        .iter()
        .map(|s| tomography_features(s).map(|f| f.values))
        .collect::<Result<Vec<_>>>()?;
    let p = rows[0].len();
    let f = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let (fc, _) = center_features(&f)?;
    let lhs = fc.norm_squared() / n as f64 / dim as f64;
    let mean_purity = states.iter().map(purity).sum::<f64>() / n as f64;
    let rhs = mean_purity - purity(&DensityMatrix::mean(states)?);
    Ok((lhs, rhs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Margin `eta > 0`.
    pub margin: f64,
    /// Failure probability `delta` in `(0, 1)`.
    pub confidence: f64,
    /// `Lambda > 0`, with `||w||^2 <= 1 / Lambda`.
    pub norm_cap: f64,
    pub n_train: usize,
    /// `Tr[K_c] / n`.
    pub kernel_trace_over_n: f64,
}

/// `(2 / eta) sqrt(trace / (n Lambda)) + 3 sqrt(ln(2 / delta) / (2 n))`.
pub fn generalization_bound(b: &BoundInputs) -> Result<f64> {
    if !(b.margin > 0.0) || !(b.norm_cap > 0.0) || b.n_train == 0 {
        return Err(Error::invalid("margin, norm cap and sample count must be positive"));
    }
    if !(b.confidence > 0.0 && b.confidence < 1.0) {
        return Err(Error::invalid(format!("confidence must lie in (0, 1), got {}", b.confidence)));
    }
    if !(b.kernel_trace_over_n >= 0.0) {
        return Err(Error::invalid("kernel trace must be non-negative"));
    }
    let n = b.n_train as f64;
    let complexity = 2.0 / b.margin * (b.kernel_trace_over_n / (n * b.norm_cap)).sqrt();
    let confidence = 3.0 * ((2.0 / b.confidence).ln() / (2.0 * n)).sqrt();
    Ok(complexity + confidence)
}

/// Principal directions of centered tomography features.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigenobservables {
    /// `P x r`; column `i` holds the Pauli-basis coefficients of `E_i`,
    /// normalized so that `Tr[E_i E_j] = delta_ij`.
    pub coefficients: DMatrix<f64>,
    /// Variance of the measured signal along each direction in feature units
    /// (that is, of `<sqrt(2^N) E_i>`), equal to the nonzero empirical
    /// eigenvalues of the centered kernel.
    pub variances: Vec<f64>,
}

pub fn eigenobservables(centered_features: &DMatrix<f64>, n_sites: usize) -> Result<Eigenobservables> {
    let (n, p) = centered_features.shape();
    if p != 1 << (2 * n_sites) {
        return Err(Error::invalid(format!("expected {} tomography columns for N = {n_sites}, got {p}", 1usize << (2 * n_sites))));
    }
    if n == 0 {
        return Err(Error::invalid("no samples"));
    }
    let svd = centered_features.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let s_max = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * s_max.max(1.0))
        .collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let scale = ((1u64 << n_sites) as f64).sqrt();
    let coefficients = DMatrix::from_fn(p, order.len(), |j, c| v_t[(order[c], j)] / scale);
    let variances = order.iter().map(|&i| svd.singular_values[i].powi(2) / n as f64).collect();
    Ok(Eigenobservables { coefficients, variances })
}
