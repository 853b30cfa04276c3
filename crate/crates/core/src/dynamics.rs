//! Driven XYZ spin chain with pure dephasing.
//!
//! `H(t) = 1/2 sum_i [F_i(t) X_i + D_i Z_i] - 1/2 sum_<ij> sum_k J^k_ij K_i K_j`
//! with `F_i(t) = eta_i xi(t; x)` and dephasing jump operators `Z_j` at a
//! uniform rate. Time is measured in units of `1/J`.
//!
//! Every term of `H` is real in the computational basis, so the integrator
//! stores a Hermitian matrix as a symmetric real part and an antisymmetric
//! imaginary part and only ever multiplies by real matrices.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{pauli_string, Axis, CMatrix, DensityMatrix, Observable, PauliWord, C64};

/// Time between pulse centers, `1/(2J)`.
pub const PULSE_SPACING: f64 = 0.5;
/// Gaussian pulse width, `1/(50J)`.
pub const PULSE_WIDTH: f64 = 0.02;

const TRACE_DRIFT_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-8;
const DEFAULT_MAX_PHASE: f64 = 0.02;
const WINDOW_PIECES: usize = 10;

/// One disorder realization of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinChainParams {
    pub n_sites: usize,
    /// `(J^x, J^y, J^z)` for the bond between sites `i` and `i + 1`.
    pub couplings: Vec<[f64; 3]>,
    pub detunings: Vec<f64>,
    pub dephasing_rate: f64,
    pub drive_scales: Vec<f64>,
    pub seed: u64,
}

impl SpinChainParams {
    pub fn with_dephasing(mut self, gamma: f64) -> Self {
        self.dephasing_rate = gamma;
        self
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites;
        if n == 0 {
            return Err(Error::invalid("chain needs at least one site"));
        }
        if self.couplings.len() != n - 1 || self.detunings.len() != n || self.drive_scales.len() != n {
            return Err(Error::invalid(format!(
                "parameter lengths do not match {n} sites (bonds {}, detunings {}, scales {})",
                self.couplings.len(),
                self.detunings.len(),
                self.drive_scales.len()
            )));
        }
        if !(self.dephasing_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "dephasing rate must be >= 0, got {}",
                self.dephasing_rate
            )));
        }
        Ok(())
    }
}

/// Draws couplings and detunings uniformly in `[0, 2]` and drive scales in
/// `[-pi, pi]`. The dephasing rate starts at zero.
pub fn sample_disorder(n_sites: usize, seed: u64) -> Result<SpinChainParams> {
    if n_sites == 0 {
        return Err(Error::invalid("chain needs at least one site"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let couplings = (0..n_sites - 1)
        .map(|_| [rng.random_range(0.0..=2.0), rng.random_range(0.0..=2.0), rng.random_range(0.0..=2.0)])
        .collect();
    let detunings = (0..n_sites).map(|_| rng.random_range(0.0..=2.0)).collect();
    let pi = std::f64::consts::PI;
    let drive_scales = (0..n_sites).map(|_| rng.random_range(-pi..=pi)).collect();
    Ok(SpinChainParams {
        n_sites,
        couplings,
        detunings,
        dephasing_rate: 0.0,
        drive_scales,
        seed,
    })
}

/// How an input vector is spread over the drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncodingMode {
    /// One pulse per input component, the same train on every site.
    Bottleneck,
    /// `n_pulse` pulses per site, each site driven by its own slice of the input.
    Extended { n_pulse: usize },
}

impl EncodingMode {
    /// Input length this mode expects on a chain of `n_sites`.
    pub fn input_len(&self, n_sites: usize, bottleneck_len: usize) -> usize {
        match *self {
            EncodingMode::Bottleneck => bottleneck_len,
            EncodingMode::Extended { n_pulse } => n_sites * n_pulse,
        }
    }
}

/// Gaussian pulse train `xi(t; x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveSchedule {
    /// Bottleneck amplitudes, one per pulse.
    amplitudes: Vec<f64>,
    /// Extended mode: `n_pulse x n_sites` amplitude matrix.
    per_site: Option<DMatrix<f64>>,
    pub pulse_spacing: f64,
    pub pulse_width: f64,
}

impl DriveSchedule {
    pub fn bottleneck(x: &[f64]) -> Self {
        DriveSchedule {
            amplitudes: x.to_vec(),
            per_site: None,
            pulse_spacing: PULSE_SPACING,
            pulse_width: PULSE_WIDTH,
        }
    }

    /// Site `i` receives `x[i * n_pulse .. (i + 1) * n_pulse]`.
    pub fn extended(x: &[f64], n_sites: usize, n_pulse: usize) -> Result<Self> {
        if n_pulse == 0 || x.len() != n_sites * n_pulse {
            return Err(Error::invalid(format!(
                "extended encoding needs {} = {n_sites} x {n_pulse} inputs, got {}",
                n_sites * n_pulse,
                x.len()
            )));
        }
        let per_site = DMatrix::from_fn(n_pulse, n_sites, |k, i| x[i * n_pulse + k]);
        Ok(DriveSchedule {
            amplitudes: Vec::new(),
            per_site: Some(per_site),
            pulse_spacing: PULSE_SPACING,
            pulse_width: PULSE_WIDTH,
        })
    }

    /// No pulses at all; the chain evolves under its static Hamiltonian.
    pub fn idle() -> Self {
        DriveSchedule::bottleneck(&[])
    }

    pub fn for_mode(x: &[f64], n_sites: usize, mode: EncodingMode) -> Result<Self> {
        match mode {
            EncodingMode::Bottleneck => Ok(DriveSchedule::bottleneck(x)),
            EncodingMode::Extended { n_pulse } => DriveSchedule::extended(x, n_sites, n_pulse),
        }
    }

    pub fn n_pulses(&self) -> usize {
        match &self.per_site {
            Some(m) => m.nrows(),
            None => self.amplitudes.len(),
        }
    }

    /// `t_k = k * spacing + 10 sigma` for the zero-based pulse `k`.
    pub fn pulse_center(&self, k: usize) -> f64 {
        k as f64 * self.pulse_spacing + 10.0 * self.pulse_width
    }

    /// `tau = 30 sigma + M * spacing`.
    pub fn end_time(&self) -> f64 {
        30.0 * self.pulse_width + self.n_pulses() as f64 * self.pulse_spacing
    }

    fn envelope(&self, t: f64, k: usize) -> f64 {
        let s = self.pulse_width;
        let d = t - self.pulse_center(k);
        (-(d * d) / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
    }

    /// The common pulse train `xi(t; x)` (bottleneck mode only).
    pub fn xi(&self, t: f64) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, &a)| a * self.envelope(t, k))
            .sum()
    }

    /// Fills `out[i] = F_i(t)`.
    pub fn fields(&self, t: f64, drive_scales: &[f64], out: &mut [f64]) {
        match &self.per_site {
            None => {
                let xi = self.xi(t);
                for (o, &eta) in out.iter_mut().zip(drive_scales) {
                    *o = eta * xi;
                }
            }
            Some(m) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for k in 0..m.nrows() {
                    let g = self.envelope(t, k);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += drive_scales[i] * m[(k, i)] * g;
                    }
                }
            }
        }
    }

    /// Upper bound on `sum_i |F_i(t)|` for `t` in `[a, b]`.
    pub fn field_bound(&self, a: f64, b: f64, drive_scales: &[f64]) -> f64 {
        (0..self.n_pulses())
            .map(|k| {
                let c = self.pulse_center(k);
                let nearest = c.clamp(a, b);
                let weight: f64 = match &self.per_site {
                    None => self.amplitudes[k].abs() * drive_scales.iter().map(|e| e.abs()).sum::<f64>(),
                    Some(m) => drive_scales.iter().enumerate().map(|(i, e)| (e * m[(k, i)]).abs()).sum(),
                };
                weight * self.envelope(nearest, k)
            })
            .sum()
    }

    /// Pulse windows `[t_k - w, t_k + w]`.
    pub fn windows(&self, half_width: f64) -> Vec<(f64, f64)> {
        (0..self.n_pulses())
            .map(|k| {
                let c = self.pulse_center(k);
                (c - half_width, c + half_width)
            })
            .collect()
    }
}

/// Fixed step sizes for the RK4 integrator.
///
/// `in_pulse` and `outside` are upper bounds. When `max_phase` is set, each
/// segment's step is further capped so that `dt * ||L||` stays below it, where
/// `||L||` bounds the generator norm over that segment (strong pulses and large
/// couplings get finer steps).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    /// Step used within `window` of any pulse center.
    pub in_pulse: f64,
    /// Step used elsewhere.
    pub outside: f64,
    pub window: f64,
    pub max_phase: Option<f64>,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            in_pulse: PULSE_WIDTH / 20.0,
            outside: PULSE_SPACING / 40.0,
            window: 6.0 * PULSE_WIDTH,
            max_phase: Some(DEFAULT_MAX_PHASE),
        }
    }
}

impl StepPolicy {
    /// Uniform step everywhere, no norm-based refinement.
    pub fn uniform(dt: f64) -> Self {
        StepPolicy {
            in_pulse: dt,
            outside: dt,
            window: 6.0 * PULSE_WIDTH,
            max_phase: None,
        }
    }

    /// The plain two-step policy without norm-based refinement.
    pub fn fixed() -> Self {
        StepPolicy {
            max_phase: None,
            ..StepPolicy::default()
        }
    }

    /// Multiplies both step sizes (and the phase cap) by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        StepPolicy {
            in_pulse: self.in_pulse * factor,
            outside: self.outside * factor,
            window: self.window,
            max_phase: self.max_phase.map(|m| m * factor),
        }
    }

    /// Splits `[t0, t1]` into uniform-step segments `(start, step, n_steps)`.
    /// `norm_bound(a, b)` bounds the generator norm on `[a, b]`.
    fn segments(
        &self,
        drive: &DriveSchedule,
        t0: f64,
        t1: f64,
        norm_bound: impl Fn(f64, f64) -> f64,
    ) -> Vec<(f64, f64, usize)> {
        let windows = drive.windows(self.window);
        let mut cuts: Vec<f64> = vec![t0, t1];
        for &(a, b) in &windows {
            // Sub-windows let the phase cap follow the pulse envelope.
            for j in 0..=WINDOW_PIECES {
                let edge = a + (b - a) * j as f64 / WINDOW_PIECES as f64;
                if edge > t0 && edge < t1 {
                    cuts.push(edge);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let inside = windows.iter().any(|&(a, b)| mid > a && mid < b);
                let mut target = if inside { self.in_pulse } else { self.outside };
                if let Some(phase) = self.max_phase {
                    let bound = norm_bound(w[0], w[1]);
                    if bound > 0.0 {
                        target = target.min(phase / bound);
                    }
                }
                let len = w[1] - w[0];
                let n = ((len / target) - 1e-9).ceil().max(1.0) as usize;
                (w[0], len / n as f64, n)
            })
            .collect()
    }
}

fn add_pauli_term(h: &mut DMatrix<f64>, word: &PauliWord, coef: f64) {
    let act = word.action();
    debug_assert!(act.n_y % 2 == 0, "term must be real");
    for b in 0..h.nrows() {
        h[(b ^ act.flip, b)] += coef * act.phase(b).re;
    }
}

/// Static Hamiltonian `1/2 sum D_i Z_i - 1/2 sum_<ij> sum_k J^k K_i K_j`.
pub fn static_hamiltonian(params: &SpinChainParams) -> DMatrix<f64> {
    let n = params.n_sites;
    let dim = params.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for (i, &d) in params.detunings.iter().enumerate() {
        add_pauli_term(&mut h, &PauliWord::single_site(n, i, Axis::Z), 0.5 * d);
    }
    for (i, j) in params.couplings.iter().enumerate() {
        for (axis, &jk) in Axis::ALL.iter().zip(j.iter()) {
            let mut w = vec![0u8; n];
            w[i] = *axis as u8;
            w[i + 1] = *axis as u8;
            add_pauli_term(&mut h, &PauliWord::new(w).expect("valid word"), -0.5 * jk);
        }
    }
    h
}

fn add_drive(h: &mut DMatrix<f64>, n_sites: usize, fields: &[f64]) {
    for (site, &f) in fields.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let bit = 1usize << (n_sites - 1 - site);
        for b in 0..h.nrows() {
            h[(b ^ bit, b)] += 0.5 * f;
        }
    }
}

/// `H(t)` for a given drive, as a Hermitian observable.
pub fn hamiltonian_at(params: &SpinChainParams, drive: &DriveSchedule, t: f64) -> Result<Observable> {
    params.validate()?;
    let mut h = static_hamiltonian(params);
    let mut fields = vec![0.0; params.n_sites];
    drive.fields(t, &params.drive_scales, &mut fields);
    add_drive(&mut h, params.n_sites, &fields);
    Observable::from_real(&h)
}

/// `D(A)[rho] = A rho A^dag - 1/2 {A^dag A, rho}`.
pub fn dissipator(a: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ada = a.adjoint() * a;
    a * rho * a.adjoint() - (&ada * rho + rho * &ada) * C64::new(0.5, 0.0)
}

/// Right-hand side `-i[H, rho] + gamma sum_j D(Z_j)[rho]` with dense
/// complex arithmetic.
pub fn lindblad_generator(state: &DensityMatrix, h: &Observable, params: &SpinChainParams) -> Result<CMatrix> {
    if state.dim() != h.dim() || state.dim() != params.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: state {}, Hamiltonian {}, chain {}",
            state.dim(),
            h.dim(),
            params.dim()
        )));
    }
    Ok(generator_dense(state.data(), h.data(), params))
}

pub(crate) fn generator_dense(rho: &CMatrix, h: &CMatrix, params: &SpinChainParams) -> CMatrix {
    let mut out = (h * rho - rho * h) * C64::new(0.0, -1.0);
    if params.dephasing_rate > 0.0 {
        for j in 0..params.n_sites {
            let z = pauli_string(&PauliWord::single_site(params.n_sites, j, Axis::Z), params.n_sites)
                .expect("valid word");
            out += dissipator(z.data(), rho) * C64::new(params.dephasing_rate, 0.0);
        }
    }
    out
}

/// Hermitian matrix split as `re + i im` with `re` symmetric and `im`
/// antisymmetric.
#[derive(Clone, Debug)]
pub(crate) struct SplitHermitian {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl SplitHermitian {
    pub fn from_complex(m: &CMatrix) -> Self {
        let re = m.map(|z| z.re);
        let im = m.map(|z| z.im);
        SplitHermitian {
            re: (&re + re.transpose()) * 0.5,
            im: (&im - im.transpose()) * 0.5,
        }
    }

    pub fn to_complex(&self) -> CMatrix {
        CMatrix::from_fn(self.re.nrows(), self.re.ncols(), |a, b| {
            C64::new(self.re[(a, b)], self.im[(a, b)])
        })
    }

    fn zeros(dim: usize) -> Self {
        SplitHermitian {
            re: DMatrix::zeros(dim, dim),
            im: DMatrix::zeros(dim, dim),
        }
    }

    fn trace(&self) -> f64 {
        self.re.trace()
    }
}

/// Precomputed pieces of the generator for one chain.
#[derive(Clone, Debug)]
pub struct ChainModel {
    params: SpinChainParams,
    h_static: DMatrix<f64>,
    /// `-2 gamma * hamming(a, b)`: dephasing acts elementwise.
    damping: DMatrix<f64>,
    /// `lambda_max - lambda_min` of the static Hamiltonian, which bounds the
    /// norm of `rho -> -i[H, rho]`.
    static_spread: f64,
    /// `2 gamma N`, the largest dephasing rate of any coherence.
    damping_bound: f64,
    /// Diagonal of the static Hamiltonian.
    diag: Vec<f64>,
    /// Static off-diagonal structure: `(mask, w)` with `H[r, r ^ mask] = w[r]`.
    flips: Vec<(usize, Vec<f64>)>,
}

impl ChainModel {
    pub fn new(params: &SpinChainParams) -> Result<Self> {
        params.validate()?;
        let dim = params.dim();
        let gamma = params.dephasing_rate;
        let damping = DMatrix::from_fn(dim, dim, |a, b| -2.0 * gamma * ((a ^ b).count_ones() as f64));
        let h_static = static_hamiltonian(params);
        let eig = h_static.clone().symmetric_eigenvalues();
        let static_spread = eig.max() - eig.min();
        let diag = (0..dim).map(|r| h_static[(r, r)]).collect();
        let flips = (1..dim)
            .filter_map(|mask| {
                let w: Vec<f64> = (0..dim).map(|r| h_static[(r, r ^ mask)]).collect();
                w.iter().any(|&v| v != 0.0).then_some((mask, w))
            })
            .collect();
        Ok(ChainModel {
            params: params.clone(),
            h_static,
            damping,
            diag,
            flips,
            static_spread,
            damping_bound: 2.0 * gamma * params.n_sites as f64,
        })
    }

    pub fn params(&self) -> &SpinChainParams {
        &self.params
    }

    /// Evolves a state from `t0` to `t1`, checking trace drift on every step
    /// and positivity at the end.
    pub fn evolve(
        &self,
        initial: &DensityMatrix,
        drive: &DriveSchedule,
        t0: f64,
        t1: f64,
        policy: &StepPolicy,
    ) -> Result<DensityMatrix> {
        if initial.dim() != self.params.dim() {
            return Err(Error::invalid(format!(
                "state dimension {} does not match chain dimension {}",
                initial.dim(),
                self.params.dim()
            )));
        }
        let mut state = SplitHermitian::from_complex(initial.data());
        self.integrate(&mut state, drive, t0, t1, policy, true)?;
        let tr = state.trace();
        if (tr - 1.0).abs() > TRACE_DRIFT_TOL {
            return Err(Error::Integration {
                time: t1,
                reason: format!("trace drifted to {tr}"),
            });
        }
        state.re /= tr;
        state.im /= tr;
        let out = DensityMatrix::from_trusted(self.params.n_sites, state.to_complex());
        let min = out.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::Integration {
                time: t1,
                reason: format!("negative eigenvalue {min:.3e}"),
            });
        }
        Ok(out)
    }

    /// Applies the (linear) evolution map to an arbitrary Hermitian operator.
    pub(crate) fn propagate(
        &self,
        op: &mut SplitHermitian,
        drive: &DriveSchedule,
        t0: f64,
        t1: f64,
        policy: &StepPolicy,
    ) -> Result<()> {
        self.integrate(op, drive, t0, t1, policy, false)
    }

    fn integrate(
        &self,
        y: &mut SplitHermitian,
        drive: &DriveSchedule,
        t0: f64,
        t1: f64,
        policy: &StepPolicy,
        check_trace: bool,
    ) -> Result<()> {
        if !(t1 >= t0) {
            return Err(Error::invalid(format!("end time {t1} precedes start time {t0}")));
        }
        if t1 == t0 {
            return Ok(());
        }
        let dim = self.params.dim();
        let mut ws = Workspace::new(dim, self.params.n_sites);
        let scales = &self.params.drive_scales;
        let bound = |a: f64, b: f64| self.static_spread + drive.field_bound(a, b, scales) + self.damping_bound;
        for (start, h, n) in policy.segments(drive, t0, t1, bound) {
            for step in 0..n {
                let t = start + step as f64 * h;
                self.rk4_step(y, drive, t, h, &mut ws);
                if check_trace {
                    let tr = y.trace();
                    if !tr.is_finite() || (tr - 1.0).abs() > TRACE_DRIFT_TOL {
                        return Err(Error::Integration {
                            time: t + h,
                            reason: format!("trace drifted to {tr}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// `out = H(t) y` for column-major `y`, using the sparse flip structure.
    fn apply_h(&self, fields: &[f64], y: &[f64], out: &mut [f64]) {
        let dim = self.diag.len();
        let n = self.params.n_sites;
        for c in 0..dim {
            let col = &y[c * dim..(c + 1) * dim];
            let o = &mut out[c * dim..(c + 1) * dim];
            for r in 0..dim {
                o[r] = self.diag[r] * col[r];
            }
            for (mask, w) in &self.flips {
                for r in 0..dim {
                    o[r] += w[r] * col[r ^ mask];
                }
            }
            for (site, &f) in fields.iter().enumerate() {
                if f != 0.0 {
                    let bit = 1usize << (n - 1 - site);
                    let half = 0.5 * f;
                    for r in 0..dim {
                        o[r] += half * col[r ^ bit];
                    }
                }
            }
        }
    }

    /// `out = L_t(y)` using `-i[H, A + iB] = [H, B] - i[H, A]` for real
    /// symmetric `H`, symmetric `A` and antisymmetric `B`.
    fn generator(&self, fields: &[f64], y: &SplitHermitian, out: &mut SplitHermitian, ws: &mut Scratch) {
        let dim = self.diag.len();
        self.apply_h(fields, y.im.as_slice(), &mut ws.hb);
        self.apply_h(fields, y.re.as_slice(), &mut ws.ha);
        let (hb, ha) = (&ws.hb, &ws.ha);
        let ore = out.re.as_mut_slice();
        let oim = out.im.as_mut_slice();
        for c in 0..dim {
            for r in 0..dim {
                let rc = c * dim + r;
                let cr = r * dim + c;
                ore[rc] = hb[rc] + hb[cr];
                oim[rc] = ha[cr] - ha[rc];
            }
        }
        if self.params.dephasing_rate > 0.0 {
            let d = self.damping.as_slice();
            let (yre, yim) = (y.re.as_slice(), y.im.as_slice());
            for i in 0..dim * dim {
                ore[i] += d[i] * yre[i];
                oim[i] += d[i] * yim[i];
            }
        }
    }

    fn rk4_step(&self, y: &mut SplitHermitian, drive: &DriveSchedule, t: f64, h: f64, ws: &mut Workspace) {
        let Workspace { fields, k, stage, acc, scratch } = ws;
        let scales = &self.params.drive_scales;
        // k1
        drive.fields(t, scales, fields);
        self.generator(fields, y, k, scratch);
        acc.re.copy_from(&k.re);
        acc.im.copy_from(&k.im);
        // k2
        combine(stage, y, 0.5 * h, k);
        drive.fields(t + 0.5 * h, scales, fields);
        self.generator(fields, stage, k, scratch);
        axpy(&mut acc.re, 2.0, &k.re);
        axpy(&mut acc.im, 2.0, &k.im);
        // k3
        combine(stage, y, 0.5 * h, k);
        self.generator(fields, stage, k, scratch);
        axpy(&mut acc.re, 2.0, &k.re);
        axpy(&mut acc.im, 2.0, &k.im);
        // k4
        combine(stage, y, h, k);
        drive.fields(t + h, scales, fields);
        self.generator(fields, stage, k, scratch);
        acc.re += &k.re;
        acc.im += &k.im;
        axpy(&mut y.re, h / 6.0, &acc.re);
        axpy(&mut y.im, h / 6.0, &acc.im);
    }

    /// Dense Hamiltonian at time `t` (mainly for inspection).
    pub fn hamiltonian(&self, drive: &DriveSchedule, t: f64) -> DMatrix<f64> {
        let mut h = self.h_static.clone();
        let mut fields = vec![0.0; self.params.n_sites];
        drive.fields(t, &self.params.drive_scales, &mut fields);
        add_drive(&mut h, self.params.n_sites, &fields);
        h
    }
}

#[inline]
fn axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

/// `out = y + a x`.
fn combine(out: &mut SplitHermitian, y: &SplitHermitian, a: f64, x: &SplitHermitian) {
    for (o, (yi, xi)) in out.re.as_mut_slice().iter_mut().zip(y.re.as_slice().iter().zip(x.re.as_slice())) {
        *o = yi + a * xi;
    }
    for (o, (yi, xi)) in out.im.as_mut_slice().iter_mut().zip(y.im.as_slice().iter().zip(x.im.as_slice())) {
        *o = yi + a * xi;
    }
}

struct Scratch {
    hb: Vec<f64>,
    ha: Vec<f64>,
}

struct Workspace {
    fields: Vec<f64>,
    k: SplitHermitian,
    stage: SplitHermitian,
    acc: SplitHermitian,
    scratch: Scratch,
}

impl Workspace {
    fn new(dim: usize, n_sites: usize) -> Self {
        Workspace {
            fields: vec![0.0; n_sites],
            k: SplitHermitian::zeros(dim),
            stage: SplitHermitian::zeros(dim),
            acc: SplitHermitian::zeros(dim),
            scratch: Scratch {
                hb: vec![0.0; dim * dim],
                ha: vec![0.0; dim * dim],
            },
        }
    }
}

/// Integrates the master equation from `t0` to `t1` with fixed-step RK4.
pub fn evolve(
    initial: &DensityMatrix,
    params: &SpinChainParams,
    drive: &DriveSchedule,
    t0: f64,
    t1: f64,
    policy: &StepPolicy,
) -> Result<DensityMatrix> {
    ChainModel::new(params)?.evolve(initial, drive, t0, t1, policy)
}

/// Reusable encoder for one chain, mode and step policy.
#[derive(Clone, Debug)]
pub struct Encoder {
    model: ChainModel,
    mode: EncodingMode,
    policy: StepPolicy,
}

impl Encoder {
    pub fn new(params: &SpinChainParams, mode: EncodingMode, policy: StepPolicy) -> Result<Self> {
        Ok(Encoder {
            model: ChainModel::new(params)?,
            mode,
            policy,
        })
    }

    pub fn model(&self) -> &ChainModel {
        &self.model
    }

    pub fn policy(&self) -> &StepPolicy {
        &self.policy
    }

    pub fn schedule(&self, x: &[f64]) -> Result<DriveSchedule> {
        DriveSchedule::for_mode(x, self.model.params.n_sites, self.mode)
    }

    /// `rho(x)`: the all-down state driven by `x` up to `tau`.
    pub fn encode(&self, x: &[f64]) -> Result<DensityMatrix> {
        let drive = self.schedule(x)?;
        let n = self.model.params.n_sites;
        self.model
            .evolve(&DensityMatrix::all_down(n), &drive, 0.0, drive.end_time(), &self.policy)
    }

    /// States at each of the (ascending, non-negative) `times`, starting
    /// from the all-down state at `t = 0`.
    pub fn trajectory(&self, x: &[f64], times: &[f64]) -> Result<Vec<DensityMatrix>> {
        let drive = self.schedule(x)?;
        let mut state = DensityMatrix::all_down(self.model.params.n_sites);
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &next in times {
            state = self.model.evolve(&state, &drive, t, next, &self.policy)?;
            t = next;
            out.push(state.clone());
        }
        Ok(out)
    }
}

/// Encodes a single input from the all-down initial state.
pub fn encode_input(
    x: &[f64],
    params: &SpinChainParams,
    mode: EncodingMode,
    policy: &StepPolicy,
) -> Result<DensityMatrix> {
    Encoder::new(params, mode, *policy)?.encode(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{expectation, purity, MaxAbs};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_site(detuning: f64, gamma: f64) -> SpinChainParams {
        SpinChainParams {
            n_sites: 1,
            couplings: vec![],
            detunings: vec![detuning],
            dephasing_rate: gamma,
            drive_scales: vec![1.0],
            seed: 0,
        }
    }

    fn plus_state() -> DensityMatrix {
        let mut m = CMatrix::identity(2, 2) * c(0.5, 0.0);
        m[(0, 1)] = c(0.5, 0.0);
        m[(1, 0)] = c(0.5, 0.0);
        DensityMatrix::new(m).unwrap()
    }

    fn sx() -> Observable {
        pauli_string(&PauliWord::new(vec![1]).unwrap(), 1).unwrap()
    }
    fn sy() -> Observable {
        pauli_string(&PauliWord::new(vec![2]).unwrap(), 1).unwrap()
    }
    fn sz() -> Observable {
        pauli_string(&PauliWord::new(vec![3]).unwrap(), 1).unwrap()
    }

    #[test]
    fn disorder_is_deterministic_and_in_range() {
        let a = sample_disorder(3, 7).unwrap();
        let b = sample_disorder(3, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_disorder(3, 8).unwrap());
        for seed in 0..50 {
            let p = sample_disorder(4, seed).unwrap();
            assert_eq!(p.couplings.len(), 3);
            assert!(p.couplings.iter().flatten().all(|&j| (0.0..=2.0).contains(&j)));
            assert!(p.detunings.iter().all(|&d| (0.0..=2.0).contains(&d)));
            let pi = std::f64::consts::PI;
            assert!(p.drive_scales.iter().all(|&e| (-pi..=pi).contains(&e)));
        }
        let single = sample_disorder(1, 3).unwrap();
        assert!(single.couplings.is_empty());
        assert_eq!(single.detunings.len(), 1);
        assert_eq!(single.drive_scales.len(), 1);
        assert!(sample_disorder(0, 1).is_err());
    }

    #[test]
    fn schedule_timing() {
        let d = DriveSchedule::bottleneck(&[0.0; 10]);
        assert_abs_diff_eq!(d.pulse_center(0), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(d.end_time(), 30.0 * PULSE_WIDTH + 10.0 * PULSE_SPACING, epsilon = 1e-15);
        assert!(d.end_time() - d.pulse_center(9) >= 10.0 * PULSE_WIDTH);
        let e = DriveSchedule::extended(&[1.0; 9], 3, 3).unwrap();
        assert_eq!(e.n_pulses(), 3);
        assert!(DriveSchedule::extended(&[1.0; 8], 3, 3).is_err());
    }

    #[test]
    fn gaussian_peak_value() {
        let x = [0.3, -0.7, 1.1];
        let d = DriveSchedule::bottleneck(&x);
        let peak = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * PULSE_WIDTH);
        for (k, &xk) in x.iter().enumerate() {
            assert_abs_diff_eq!(d.xi(d.pulse_center(k)), xk * peak, epsilon = 1e-9 * peak);
        }
    }

    #[test]
    fn zero_drive_gives_static_hamiltonian() {
        let p = sample_disorder(3, 1).unwrap();
        let d = DriveSchedule::bottleneck(&[0.0; 10]);
        let h = hamiltonian_at(&p, &d, d.pulse_center(2)).unwrap();
        let h0 = static_hamiltonian(&p).map(|v| c(v, 0.0));
        assert_eq!(h.data(), &h0);
    }

    #[test]
    fn single_site_hamiltonian() {
        let h = hamiltonian_at(&one_site(1.0, 0.0), &DriveSchedule::idle(), 0.3).unwrap();
        let expected = sz().data() * c(0.5, 0.0);
        assert_eq!(h.data(), &expected);
    }

    #[test]
    fn hamiltonian_matches_explicit_pauli_sum() {
        let p = sample_disorder(3, 5).unwrap();
        let d = DriveSchedule::bottleneck(&[0.4, -0.2]);
        let t = d.pulse_center(1) + 0.3 * PULSE_WIDTH;
        let h = hamiltonian_at(&p, &d, t).unwrap();
        let n = 3;
        let op = |w: Vec<u8>| pauli_string(&PauliWord::new(w).unwrap(), n).unwrap().data().clone();
        let mut expected = CMatrix::zeros(8, 8);
        let xi = d.xi(t);
        for i in 0..n {
            let mut wx = vec![0; n];
            wx[i] = 1;
            let mut wz = vec![0; n];
            wz[i] = 3;
            expected += op(wx) * c(0.5 * p.drive_scales[i] * xi, 0.0);
            expected += op(wz) * c(0.5 * p.detunings[i], 0.0);
        }
        for (b, j) in p.couplings.iter().enumerate() {
            for k in 0..3 {
                let mut w = vec![0; n];
                w[b] = k as u8 + 1;
                w[b + 1] = k as u8 + 1;
                expected -= op(w) * c(0.5 * j[k], 0.0);
            }
        }
        assert!((h.data() - expected).max_abs() < 1e-12);
    }

    #[test]
    fn generator_examples() {
        // Dephasing flips the sign of sigma_x: D(Z)[X/2] = -X.
        let p = one_site(0.0, 1.0);
        let zero = Observable::new(CMatrix::zeros(2, 2)).unwrap();
        let d = lindblad_generator(&plus_state(), &zero, &p).unwrap();
        assert!((d + sx().data()).max_abs() < 1e-15);

        // Diagonal states are fixed points of pure dephasing.
        let mut diag = CMatrix::zeros(2, 2);
        diag[(0, 0)] = c(0.3, 0.0);
        diag[(1, 1)] = c(0.7, 0.0);
        let d = lindblad_generator(&DensityMatrix::new(diag).unwrap(), &zero, &p).unwrap();
        assert_eq!(d.max_abs(), 0.0);

        // -i[Z/2, X/2] = Y/2.
        let p = one_site(1.0, 0.0);
        let h = Observable::new(sz().data() * c(0.5, 0.0)).unwrap();
        let d = lindblad_generator(&plus_state(), &h, &p).unwrap();
        assert!((d - sy().data() * c(0.5, 0.0)).max_abs() < 1e-15);
    }

    #[test]
    fn generator_matches_unitary_finite_difference() {
        // rho(t) = U rho U^dag with U = exp(-i t Z / 2); central difference at t = 0.
        let eps = 1e-5;
        let rot = |t: f64| {
            let mut u = CMatrix::zeros(2, 2);
            u[(0, 0)] = C64::from_polar(1.0, -t / 2.0);
            u[(1, 1)] = C64::from_polar(1.0, t / 2.0);
            &u * plus_state().data() * u.adjoint()
        };
        let fd = (rot(eps) - rot(-eps)) / c(2.0 * eps, 0.0);
        let p = one_site(1.0, 0.0);
        let h = hamiltonian_at(&p, &DriveSchedule::idle(), 0.0).unwrap();
        let g = lindblad_generator(&plus_state(), &h, &p).unwrap();
        assert!((fd - g).max_abs() < 1e-9);
    }

    #[test]
    fn split_generator_matches_dense_generator() {
        let p = sample_disorder(3, 9).unwrap().with_dephasing(0.7);
        let model = ChainModel::new(&p).unwrap();
        let d = DriveSchedule::bottleneck(&[0.5, -0.3]);
        let t = d.pulse_center(0) + 0.01;
        let rho = encode_input(&[0.2, 0.9], &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
        let h = model.hamiltonian(&d, t);
        let dense = generator_dense(rho.data(), &h.map(|v| c(v, 0.0)), &p);
        let split = SplitHermitian::from_complex(rho.data());
        let mut out = SplitHermitian::zeros(8);
        let mut fields = vec![0.0; 3];
        d.fields(t, &p.drive_scales, &mut fields);
        let mut ws = Workspace::new(8, 3);
        model.generator(&fields, &split, &mut out, &mut ws.scratch);
        assert!((out.to_complex() - &dense).max_abs() < 1e-13);
        assert!(dense.trace().norm() < 1e-12);
        assert!(crate::qcore::hermiticity_error(&dense) < 1e-12);
    }

    #[test]
    fn dephasing_oracle() {
        let gamma = 0.5;
        let p = one_site(0.0, gamma);
        let rho = evolve(&plus_state(), &p, &DriveSchedule::idle(), 0.0, 1.0, &StepPolicy::default()).unwrap();
        let x = expectation(&rho, &sx()).unwrap();
        assert_abs_diff_eq!(x, (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn zero_interval_is_identity() {
        let p = sample_disorder(2, 4).unwrap().with_dephasing(0.3);
        let rho = DensityMatrix::from_bloch(2, &{
            let mut b = vec![0.0; 16];
            b[0] = 1.0;
            b[1] = 0.3;
            b[7] = -0.2;
            b
        })
        .unwrap();
        let out = evolve(&rho, &p, &DriveSchedule::idle(), 1.5, 1.5, &StepPolicy::default()).unwrap();
        assert!((out.data() - rho.data()).max_abs() < 1e-15);
        assert!(evolve(&rho, &p, &DriveSchedule::idle(), 2.0, 1.0, &StepPolicy::default()).is_err());
    }

    #[test]
    fn unitary_evolution_preserves_purity() {
        let p = sample_disorder(3, 2).unwrap();
        let rho = evolve(&DensityMatrix::all_down(3), &p, &DriveSchedule::idle(), 0.0, 3.0, &StepPolicy::default())
            .unwrap();
        assert_abs_diff_eq!(purity(&rho), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_input_is_free_evolution() {
        let p = sample_disorder(2, 12).unwrap();
        let x = [0.0; 10];
        let enc = encode_input(&x, &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
        let tau = DriveSchedule::bottleneck(&x).end_time();
        let free = evolve(
            &DensityMatrix::all_down(2),
            &p,
            &DriveSchedule::idle(),
            0.0,
            tau,
            &StepPolicy::uniform(PULSE_WIDTH / 20.0),
        )
        .unwrap();
        assert!((enc.data() - free.data()).max_abs() < 1e-9);
    }

    #[test]
    fn encoding_is_bitwise_deterministic() {
        let p = sample_disorder(3, 21).unwrap().with_dephasing(0.1);
        let x = [0.1, -0.3, 0.25, 0.0, 0.4, -0.1, 0.2, 0.3, -0.2, 0.05];
        let a = encode_input(&x, &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
        let b = encode_input(&x, &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn opposite_inputs_rotate_oppositely() {
        let p = SpinChainParams {
            detunings: vec![0.0],
            ..one_site(0.0, 0.0)
        };
        let x = [0.4, -0.25, 0.1];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = encode_input(&x, &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
        let b = encode_input(&neg, &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
        let (za, zb) = (expectation(&a, &sz()).unwrap(), expectation(&b, &sz()).unwrap());
        let (ya, yb) = (expectation(&a, &sy()).unwrap(), expectation(&b, &sy()).unwrap());
        assert_abs_diff_eq!(za, zb, epsilon = 1e-10);
        assert_abs_diff_eq!(ya, -yb, epsilon = 1e-10);
        // Total rotation angle is sum(x) about X, so <Y> = -sin(angle) from spin down.
        let angle: f64 = x.iter().sum();
        assert_abs_diff_eq!(za, -angle.cos(), epsilon = 1e-8);
        assert!(ya.abs() > 0.1);
    }

    #[test]
    fn extended_mode_drives_sites_independently() {
        let p = SpinChainParams {
            n_sites: 2,
            couplings: vec![[0.0; 3]],
            detunings: vec![0.0, 0.0],
            dephasing_rate: 0.0,
            drive_scales: vec![1.0, 1.0],
            seed: 0,
        };
        // Site 0 gets (0.5, 0.5), site 1 gets (0, 0).
        let rho = encode_input(&[0.5, 0.5, 0.0, 0.0], &p, EncodingMode::Extended { n_pulse: 2 }, &StepPolicy::default())
            .unwrap();
        let z0 = pauli_string(&PauliWord::new(vec![3, 0]).unwrap(), 2).unwrap();
        let z1 = pauli_string(&PauliWord::new(vec![0, 3]).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(expectation(&rho, &z0).unwrap(), -(1.0f64).cos(), epsilon = 1e-8);
        assert_abs_diff_eq!(expectation(&rho, &z1).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let gamma = 2.0;
        let p = one_site(0.0, gamma);
        let run = |dt: f64| {
            let rho = evolve(&plus_state(), &p, &DriveSchedule::idle(), 0.0, 1.0, &StepPolicy::uniform(dt)).unwrap();
            expectation(&rho, &sx()).unwrap()
        };
        let h = PULSE_SPACING / 40.0;
        let (coarse, half, quarter) = (run(h), run(h / 2.0), run(h / 4.0));
        let ratio = (coarse - quarter).abs() / (half - quarter).abs();
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dephasing_is_purity_monotone() {
        let p = SpinChainParams {
            couplings: vec![[0.0; 3]],
            detunings: vec![0.0; 2],
            ..sample_disorder(2, 3).unwrap().with_dephasing(0.4)
        };
        let model = ChainModel::new(&p).unwrap();
        let mut b = vec![0.0; 16];
        b[0] = 1.0;
        b[4] = 0.4; // XI
        b[5] = 0.2; // XX
        b[6] = 0.2; // XY
        let mut rho = DensityMatrix::from_bloch(2, &b).unwrap();
        let mut last = purity(&rho);
        for k in 0..20 {
            let t = k as f64 * 0.1;
            rho = model.evolve(&rho, &DriveSchedule::idle(), t, t + 0.1, &StepPolicy::default()).unwrap();
            let now = purity(&rho);
            assert!(now <= last + 1e-10);
            last = now;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn encoded_states_are_valid(seed in 0u64..10_000, n in 1usize..4, g in 0usize..3) {
            let gamma = [0.0, 0.1, 1.0][g];
            let p = sample_disorder(n, seed).unwrap().with_dephasing(gamma);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rho = encode_input(&x, &p, EncodingMode::Bottleneck, &StepPolicy::default()).unwrap();
            prop_assert!((rho.trace() - 1.0).abs() <= 1e-9);
            prop_assert!(rho.hermiticity_error() <= 1e-10);
            prop_assert!(rho.min_eigenvalue() >= -1e-8);
        }
    }
}
