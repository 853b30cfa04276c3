//! Dense operator algebra for chains of spin-1/2 sites.
//!
//! Basis convention: the computational index of a site is its bit in the
//! basis label, site 0 being the most significant bit. Bit value 0 is spin
//! up (`sigma_z = +1`) and bit value 1 is spin down (`sigma_z = -1`), so the
//! Pauli matrices keep their textbook form and the all-down product state
//! sits at index `2^N - 1`.
//!
//! Pauli words are indexed lexicographically in `(i_1, ..., i_N)` with
//! site 1 varying slowest, `0 = identity, 1 = x, 2 = y, 3 = z`. This fixes the
//! layout of tomography feature vectors everywhere in the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

const HERMITIAN_ACCEPT: f64 = 1e-8;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-8;
const IMAG_REJECT: f64 = 1e-8;
const ENTROPY_CLAMP: f64 = 1e-14;

/// Single-site Pauli axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 1,
    Y = 2,
    Z = 3,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

/// A Pauli-index word `(i_1, ..., i_N)` with `i_k in {0,1,2,3}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliWord(Vec<u8>);

impl PauliWord {
    pub fn new(indices: Vec<u8>) -> Result<Self> {
        if let Some((site, &bad)) = indices.iter().enumerate().find(|(_, &i)| i > 3) {
            return Err(Error::invalid(format!(
                "Pauli index {bad} at site {site} is outside {{0,1,2,3}}"
            )));
        }
        Ok(PauliWord(indices))
    }

    pub fn identity(n_sites: usize) -> Self {
        PauliWord(vec![0; n_sites])
    }

    /// The word acting as `axis` on `site` and as the identity elsewhere.
    pub fn single_site(n_sites: usize, site: usize, axis: Axis) -> Self {
        let mut w = vec![0; n_sites];
        w[site] = axis as u8;
        PauliWord(w)
    }

    /// Inverse of [`PauliWord::index`].
    pub fn from_index(mut index: usize, n_sites: usize) -> Self {
        let mut w = vec![0u8; n_sites];
        for slot in w.iter_mut().rev() {
            *slot = (index % 4) as u8;
            index /= 4;
        }
        PauliWord(w)
    }

    /// Lexicographic position in the `4^N` basis, site 1 slowest.
    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, &i| acc * 4 + i as usize)
    }

    pub fn n_sites(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[u8] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&i| i == 0)
    }

    /// Every word on `n_sites` sites in basis order.
    pub fn all(n_sites: usize) -> impl Iterator<Item = PauliWord> {
        (0..1usize << (2 * n_sites)).map(move |i| PauliWord::from_index(i, n_sites))
    }

    pub(crate) fn action(&self) -> PauliAction {
        let n = self.0.len();
        let mut flip = 0usize;
        let mut sign = 0usize;
        let mut n_y = 0u32;
        for (site, &p) in self.0.iter().enumerate() {
            let bit = 1usize << (n - 1 - site);
            match p {
                1 => flip |= bit,
                2 => {
                    flip |= bit;
                    sign |= bit;
                    n_y += 1;
                }
                3 => sign |= bit,
                _ => {}
            }
        }
        PauliAction { flip, sign, n_y }
    }
}

impl std::fmt::Display for PauliWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &i in &self.0 {
            f.write_str(["I", "X", "Y", "Z"][i as usize])?;
        }
        Ok(())
    }
}

/// `O|b> = i^n_y (-1)^{popcount(b & sign)} |b ^ flip>`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PauliAction {
    pub flip: usize,
    pub sign: usize,
    pub n_y: u32,
}

impl PauliAction {
    #[inline]
    pub fn phase(&self, b: usize) -> C64 {
        let base = match self.n_y % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        if (b & self.sign).count_ones() % 2 == 1 {
            -base
        } else {
            base
        }
    }
}

/// `Tr[O_word M]` for an arbitrary square matrix in O(dim) operations.
pub fn pauli_trace(m: &CMatrix, word: &PauliWord) -> C64 {
    let act = word.action();
    (0..m.nrows())
        .map(|c| act.phase(c) * m[(c, c ^ act.flip)])
        .sum()
}

/// A Hermitian operator on the chain, optionally labelled by its Pauli word.
#[derive(Clone, Debug)]
pub struct Observable {
    data: CMatrix,
    label: Option<PauliWord>,
}

impl Observable {
    pub fn new(data: CMatrix) -> Result<Self> {
        check_square_power_of_two(&data)?;
        let err = hermiticity_error(&data);
        if err > 1e-12 {
            return Err(Error::invalid(format!(
                "observable is not Hermitian (max deviation {err:.3e})"
            )));
        }
        Ok(Observable { data, label: None })
    }

    pub fn from_real(data: &DMatrix<f64>) -> Result<Self> {
        Observable::new(data.map(|v| C64::new(v, 0.0)))
    }

    pub fn data(&self) -> &CMatrix {
        &self.data
    }

    pub fn label(&self) -> Option<&PauliWord> {
        self.label.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }
}

/// Tensor product `sigma_{i_1} ⊗ ... ⊗ sigma_{i_N}`.
pub fn pauli_string(word: &PauliWord, n_sites: usize) -> Result<Observable> {
    if word.n_sites() != n_sites {
        return Err(Error::invalid(format!(
            "word {word} has {} sites, expected {n_sites}",
            word.n_sites()
        )));
    }
    let dim = 1usize << n_sites;
    let act = word.action();
    let mut data = CMatrix::zeros(dim, dim);
    for b in 0..dim {
        data[(b ^ act.flip, b)] = act.phase(b);
    }
    Ok(Observable {
        data,
        label: Some(word.clone()),
    })
}

/// Mixed state of the chain: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    n_sites: usize,
    data: CMatrix,
}

impl DensityMatrix {
    /// Validates the state invariants and removes any Hermitian residue.
    pub fn new(data: CMatrix) -> Result<Self> {
        let n_sites = check_square_power_of_two(&data)?;
        let herm = hermiticity_error(&data);
        if herm > HERMITIAN_ACCEPT {
            return Err(Error::invalid(format!(
                "density matrix is not Hermitian (max deviation {herm:.3e})"
            )));
        }
        let data = hermitian_part(&data);
        let tr = data.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace is {tr}")));
        }
        let state = DensityMatrix { n_sites, data };
        let min = state.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::invalid(format!(
                "density matrix has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(state)
    }

    /// Wraps a matrix the caller already knows to be a valid state.
    pub(crate) fn from_trusted(n_sites: usize, data: CMatrix) -> Self {
        DensityMatrix { n_sites, data }
    }

    /// `|psi><psi|` for a normalized state vector.
    pub fn from_pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("state vector has norm {norm}")));
        }
        DensityMatrix::new(psi * psi.adjoint())
    }

    /// All spins down, the initial state of every encoding.
    pub fn all_down(n_sites: usize) -> Self {
        let dim = 1usize << n_sites;
        let mut data = CMatrix::zeros(dim, dim);
        data[(dim - 1, dim - 1)] = C64::new(1.0, 0.0);
        DensityMatrix { n_sites, data }
    }

    pub fn maximally_mixed(n_sites: usize) -> Self {
        let dim = 1usize << n_sites;
        let data = CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0);
        DensityMatrix { n_sites, data }
    }

    /// Rebuilds `rho = 2^-N sum_i phi_i O_i` from a raw Bloch vector.
    pub fn from_bloch(n_sites: usize, bloch: &[f64]) -> Result<Self> {
        let dim = 1usize << n_sites;
        if bloch.len() != dim * dim {
            return Err(Error::invalid(format!(
                "Bloch vector has length {}, expected {}",
                bloch.len(),
                dim * dim
            )));
        }
        let mut data = CMatrix::zeros(dim, dim);
        for (i, &coef) in bloch.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            let act = PauliWord::from_index(i, n_sites).action();
            for b in 0..dim {
                data[(b ^ act.flip, b)] += act.phase(b) * coef;
            }
        }
        DensityMatrix::new(data / C64::new(dim as f64, 0.0))
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &CMatrix {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.data.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.data
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Uniform mixture of a non-empty batch of states with equal size.
    pub fn mean(states: &[DensityMatrix]) -> Result<DensityMatrix> {
        let first = states
            .first()
            .ok_or_else(|| Error::invalid("cannot average an empty batch of states"))?;
        let mut acc = CMatrix::zeros(first.dim(), first.dim());
        for s in states {
            if s.dim() != first.dim() {
                return Err(Error::invalid("states in a batch must share a dimension"));
            }
            acc += &s.data;
        }
        Ok(DensityMatrix {
            n_sites: first.n_sites,
            data: acc / C64::new(states.len() as f64, 0.0),
        })
    }
}

/// `Tr[O rho]`, rejecting an imaginary part above `1e-8`.
pub fn expectation(state: &DensityMatrix, obs: &Observable) -> Result<f64> {
    if state.dim() != obs.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: state {} vs observable {}",
            state.dim(),
            obs.dim()
        )));
    }
    let value = match obs.label() {
        Some(word) => pauli_trace(state.data(), word),
        None => (obs.data() * state.data()).trace(),
    };
    real_part_checked(value)
}

pub(crate) fn real_part_checked(value: C64) -> Result<f64> {
    if value.im.abs() > IMAG_REJECT {
        return Err(Error::Numerical(format!(
            "expectation value has imaginary residue {:.3e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// `Tr[rho^2]`.
pub fn purity(state: &DensityMatrix) -> f64 {
    state.data.iter().map(|z| z.norm_sqr()).sum()
}

/// Von Neumann entropy in nats.
pub fn von_neumann_entropy(state: &DensityMatrix) -> Result<f64> {
    let mut s = 0.0;
    for lam in state.data.clone().symmetric_eigenvalues().iter().copied() {
        if lam < -PSD_TOL {
            return Err(Error::Numerical(format!(
                "positivity violation: eigenvalue {lam:.3e}"
            )));
        }
        if lam > ENTROPY_CLAMP {
            s -= lam * lam.ln();
        }
    }
    Ok(s)
}

/// Partial transpose on the tensor factor of `site`.
pub fn partial_transpose(state: &DensityMatrix, site: usize) -> Result<CMatrix> {
    let n = state.n_sites();
    if site >= n {
        return Err(Error::invalid(format!("site {site} out of range for {n} sites")));
    }
    let bit = 1usize << (n - 1 - site);
    let dim = state.dim();
    Ok(CMatrix::from_fn(dim, dim, |a, b| {
        let a2 = (a & !bit) | (b & bit);
        let b2 = (b & !bit) | (a & bit);
        state.data[(a2, b2)]
    }))
}

/// Negativity `(||rho^{T_site}||_1 - 1) / 2` of the bipartition `{site} | rest`.
pub fn negativity(state: &DensityMatrix, site: usize) -> Result<f64> {
    let pt = partial_transpose(state, site)?;
    let trace_norm: f64 = pt.symmetric_eigenvalues().iter().map(|l| l.abs()).sum();
    Ok(((trace_norm - 1.0) / 2.0).max(0.0))
}

/// Negativity averaged over every single-site bipartition.
pub fn mean_site_negativity(state: &DensityMatrix) -> Result<f64> {
    let n = state.n_sites();
    let mut total = 0.0;
    for site in 0..n {
        total += negativity(state, site)?;
    }
    Ok(total / n as f64)
}

/// Largest entry modulus of a complex matrix.
pub trait MaxAbs {
    fn max_abs(&self) -> f64;
}

impl MaxAbs for CMatrix {
    fn max_abs(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..m.nrows() {
        for b in a..m.ncols() {
            worst = worst.max((m[(a, b)] - m[(b, a)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn check_square_power_of_two(m: &CMatrix) -> Result<usize> {
    let dim = m.nrows();
    if dim != m.ncols() || dim == 0 || !dim.is_power_of_two() {
        return Err(Error::invalid(format!(
            "operator must be square with power-of-two size, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}
