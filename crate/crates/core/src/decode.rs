//! Readout of encoded states as real feature vectors.
//!
//! Two layouts are supported. Full tomography records every Pauli-string
//! expectation (`4^N` entries, entry 0 is the identity). Time multiplexing
//! lets the chain evolve freely after the drive and records the `3N`
//! single-site expectations after each of `n_rep` intervals, behind a
//! constant entry 1.
//!
//! The channel transfer matrix `Xi_kl = Tr[O_k C(O_l)]` of the free evolution
//! connects the two: with `T = Xi / 2^N`, the time-multiplexed features are
//! `S T^k` applied to the tomography vector, `S` selecting single-site words.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ChainModel, DriveSchedule, SpinChainParams, StepPolicy, SplitHermitian, PULSE_SPACING};
use crate::error::{Error, Result};
use crate::qcore::{pauli_string, pauli_trace, real_part_checked, Axis, DensityMatrix, PauliWord};

/// Default spacing between sequential measurements.
pub const DEFAULT_MEASUREMENT_INTERVAL: f64 = PULSE_SPACING;

/// Largest chain for which the transfer matrix is built.
pub const MAX_TRANSFER_SITES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureLayout {
    Tomography { n_sites: usize },
    TimeMultiplex { n_sites: usize, n_rep: usize },
    /// Plain classical features (synthetic tests, baselines).
    Raw { dim: usize },
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        match *self {
            FeatureLayout::Tomography { n_sites } => 1 << (2 * n_sites),
            FeatureLayout::TimeMultiplex { n_sites, n_rep } => 1 + 3 * n_sites * n_rep,
            FeatureLayout::Raw { dim } => dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for FeatureLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureLayout::Tomography { n_sites } => write!(f, "tomography(N={n_sites})"),
            FeatureLayout::TimeMultiplex { n_sites, n_rep } => write!(f, "time-multiplex(N={n_sites}, reps={n_rep})"),
            FeatureLayout::Raw { dim } => write!(f, "raw({dim})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// How encoded states are turned into features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Decoding {
    Tomography,
    TimeMultiplex { dt_m: f64, n_rep: usize },
}

impl Decoding {
    pub fn layout(&self, n_sites: usize) -> FeatureLayout {
        match *self {
            Decoding::Tomography => FeatureLayout::Tomography { n_sites },
            Decoding::TimeMultiplex { n_rep, .. } => FeatureLayout::TimeMultiplex { n_sites, n_rep },
        }
    }
}

/// `Tr[O_i rho]` over the whole lexicographic Pauli basis.
pub fn tomography_features(state: &DensityMatrix) -> Result<FeatureVector> {
    let n = state.n_sites();
    let mut values = PauliWord::all(n)
        .map(|w| real_part_checked(pauli_trace(state.data(), &w)))
        .collect::<Result<Vec<f64>>>()?;
    values[0] = 1.0;
    Ok(FeatureVector {
        values,
        layout: FeatureLayout::Tomography { n_sites: n },
    })
}

/// Pauli indices of the single-site words, site-major with `x, y, z` inner.
pub fn single_site_indices(n_sites: usize) -> Vec<usize> {
    (0..n_sites)
        .flat_map(|i| Axis::ALL.map(|a| PauliWord::single_site(n_sites, i, a).index()))
        .collect()
}

/// Transfer matrix of the free (undriven) evolution over `dt_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTransfer {
    pub xi: DMatrix<f64>,
    pub dt_m: f64,
    pub n_sites: usize,
}

impl ChannelTransfer {
    /// `T = Xi / 2^N`, which acts directly on tomography feature vectors.
    pub fn normalized(&self) -> DMatrix<f64> {
        &self.xi / (1u64 << self.n_sites) as f64
    }

    /// Stacked map from tomography features to time-multiplexed features:
    /// row 0 picks the constant entry, then `S T^k` for `k = 1..=n_rep`.
    pub fn lambda_stack(&self, n_rep: usize) -> DMatrix<f64> {
        let t = self.normalized();
        let p = t.nrows();
        let sel = single_site_indices(self.n_sites);
        let mut out = DMatrix::zeros(1 + sel.len() * n_rep, p);
        out[(0, 0)] = 1.0;
        let mut power = DMatrix::identity(p, p);
        for k in 0..n_rep {
            power = &t * power;
            for (j, &row) in sel.iter().enumerate() {
                out.row_mut(1 + k * sel.len() + j).copy_from(&power.row(row));
            }
        }
        out
    }
}

/// Builds `Xi` column by column by propagating each Pauli string through the
/// free channel for `dt_m`.
pub fn channel_transfer(params: &SpinChainParams, dt_m: f64, policy: &StepPolicy) -> Result<ChannelTransfer> {
    let n = params.n_sites;
    if n > MAX_TRANSFER_SITES {
        return Err(Error::invalid(format!(
            "transfer matrix limited to N <= {MAX_TRANSFER_SITES}, got {n}"
        )));
    }
    if !(dt_m >= 0.0) {
        return Err(Error::invalid(format!("measurement interval must be >= 0, got {dt_m}")));
    }
    let model = ChainModel::new(params)?;
    let words: Vec<PauliWord> = PauliWord::all(n).collect();
    let idle = DriveSchedule::idle();
    let columns = words
        .par_iter()
        .map(|w| {
            let mut op = SplitHermitian::from_complex(pauli_string(w, n)?.data());
            model.propagate(&mut op, &idle, 0.0, dt_m, policy)?;
            let out = op.to_complex();
            words
                .iter()
                .map(|k| real_part_checked(pauli_trace(&out, k)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let p = words.len();
    Ok(ChannelTransfer {
        xi: DMatrix::from_fn(p, p, |k, l| columns[l][k]),
        dt_m,
        n_sites: n,
    })
}

/// Single-site expectations `(x, y, z)` for every site, site-major.
pub fn local_expectations(state: &DensityMatrix) -> Result<Vec<f64>> {
    let n = state.n_sites();
    single_site_indices(n)
        .into_iter()
        .map(|i| real_part_checked(pauli_trace(state.data(), &PauliWord::from_index(i, n))))
        .collect()
}

/// Records local expectations after each of `n_rep` free-evolution steps of `dt_m`.
pub fn time_multiplex_with(model: &ChainModel, state_at_tau: &DensityMatrix, dt_m: f64, n_rep: usize, policy: &StepPolicy) -> Result<FeatureVector> {
    if n_rep == 0 {
        return Err(Error::invalid("time multiplexing needs at least one repetition"));
    }
    let n = state_at_tau.n_sites();
    let idle = DriveSchedule::idle();
    let mut values = Vec::with_capacity(1 + 3 * n * n_rep);
    values.push(1.0);
    let mut state = state_at_tau.clone();
    for k in 0..n_rep {
        let t = k as f64 * dt_m;
        state = model.evolve(&state, &idle, t, t + dt_m, policy)?;
        values.extend(local_expectations(&state)?);
    }
    Ok(FeatureVector {
        values,
        layout: FeatureLayout::TimeMultiplex { n_sites: n, n_rep },
    })
}

pub fn time_multiplex_features(state_at_tau: &DensityMatrix, params: &SpinChainParams, dt_m: f64, n_rep: usize) -> Result<FeatureVector> {
    let model = ChainModel::new(params)?;
    time_multiplex_with(&model, state_at_tau, dt_m, n_rep, &StepPolicy::default())
}

/// Decodes one encoded state.
pub fn decode(model: &ChainModel, state: &DensityMatrix, decoding: &Decoding, policy: &StepPolicy) -> Result<FeatureVector> {
    match *decoding {
        Decoding::Tomography => tomography_features(state),
        Decoding::TimeMultiplex { dt_m, n_rep } => time_multiplex_with(model, state, dt_m, n_rep, policy),
    }
}

/// Additive Gaussian error on measured expectation values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub sigma: f64,
    pub seed: u64,
}

impl MeasurementNoise {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::invalid(format!("noise width must be >= 0, got {sigma}")));
        }
        Ok(MeasurementNoise { sigma, seed })
    }

    /// Independent stream for input `index`, so results do not depend on
    /// processing order.
    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Adds noise to every entry but the constant entry 0.
    pub fn apply_in_place(&self, values: &mut [f64], index: u64) {
        if self.sigma == 0.0 {
            return;
        }
        let mut rng = self.rng(index);
        for v in values.iter_mut().skip(1) {
            *v += self.sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

pub fn apply_measurement_noise(features: &FeatureVector, noise: &MeasurementNoise, index: u64) -> FeatureVector {
    let mut out = features.clone();
    noise.apply_in_place(&mut out.values, index);
    out
}
