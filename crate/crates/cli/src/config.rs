//! Experiment configuration (JSON).

use std::path::{Path, PathBuf};

use nqk_core::decode::Decoding;
use nqk_core::dynamics::{EncodingMode, StepPolicy};
use nqk_core::store::sha256_hex;
use nqk_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Where the classical inputs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    /// A pair of IDX files (optionally gzipped).
    Idx { images: PathBuf, labels: PathBuf },
    /// Gaussian blobs in `n_features` dimensions, one per class.
    Synthetic { separation: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub sets: usize,
    pub set_size: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { sets: 10, set_size: 15, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Number of training inputs averaged per disorder seed.
    pub n_inputs: usize,
    /// Sampling interval in units of `1/J`.
    pub dt: f64,
    /// End of the sampled window as a multiple of the encoding time.
    pub horizon: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { n_inputs: 4, dt: 0.05, horizon: 2.0 }
    }
}

/// Default regularization grid: 25 log-spaced values from 1e-10 to 1e2.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..25).map(|i| 10f64.powf(-10.0 + 12.0 * i as f64 / 24.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub classes: Vec<u8>,
    pub n_train: usize,
    pub n_test: usize,
    /// Projected input length `M`; defaults to 10 for the bottleneck encoding
    /// and `N * n_pulse` for the extended one.
    pub n_features: Option<usize>,
    pub encoding: EncodingMode,
    pub n_sites: usize,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub decoding: Decoding,
    pub measurement_noise: f64,
    pub disorder_seeds: Vec<u64>,
    /// Master seed for the split, the projection and measurement noise.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Fit with a free intercept on centered features (otherwise the
    /// intercept is the regularized constant feature).
    pub centered: bool,
    /// Margin `eta` for the margin risk and the bound.
    pub margin: f64,
    /// Failure probability `delta` of the bound.
    pub confidence: f64,
    /// `Lambda` used for the bound in the kernel report.
    pub norm_cap: f64,
    pub step_policy: StepPolicy,
    pub bootstrap: Option<BootstrapConfig>,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Idx {
                images: PathBuf::from("data/mnist368-images-idx3-ubyte.gz"),
                labels: PathBuf::from("data/mnist368-labels-idx1-ubyte.gz"),
            },
            classes: vec![3, 6, 8],
            n_train: 600,
            n_test: 200,
            n_features: None,
            encoding: EncodingMode::Bottleneck,
            n_sites: 3,
            gammas: vec![0.01],
            lambdas: default_lambda_grid(),
            decoding: Decoding::Tomography,
            measurement_noise: 0.0,
            disorder_seeds: (0..5).collect(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            centered: true,
            margin: 1.0,
            confidence: 0.05,
            norm_cap: 1.0,
            step_policy: StepPolicy::default(),
            bootstrap: None,
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config; relative dataset paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        if let (DatasetSource::Idx { images, labels }, Some(dir)) = (&mut cfg.dataset, path.parent()) {
            for p in [images, labels] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn m_features(&self) -> usize {
        self.n_features.unwrap_or(match self.encoding {
            EncodingMode::Bottleneck => 10,
            EncodingMode::Extended { n_pulse } => self.n_sites * n_pulse,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.classes.len() < 2 {
            return bad("at least two classes are required".into());
        }
        if self.n_train < 2 || self.n_test == 0 {
            return bad(format!("need n_train >= 2 and n_test >= 1, got {} and {}", self.n_train, self.n_test));
        }
        if self.n_sites == 0 {
            return bad("n_sites must be >= 1".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return bad(format!("dephasing rates must be finite and >= 0, got {g}"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return bad(format!("regularization values must be finite and >= 0, got {l}"));
        }
        if self.gammas.is_empty() || self.lambdas.is_empty() || self.disorder_seeds.is_empty() {
            return bad("gammas, lambdas and disorder_seeds must be non-empty".into());
        }
        if !(self.measurement_noise >= 0.0) {
            return bad(format!("measurement noise must be >= 0, got {}", self.measurement_noise));
        }
        if !(self.margin > 0.0) || !(self.norm_cap > 0.0) || !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("margin and norm_cap must be > 0 and confidence in (0, 1)".into());
        }
        if let EncodingMode::Extended { n_pulse } = self.encoding {
            if n_pulse == 0 || self.m_features() != self.n_sites * n_pulse {
                return bad(format!("extended encoding needs n_features = n_sites * n_pulse = {}", self.n_sites * n_pulse));
            }
        }
        if let Decoding::TimeMultiplex { dt_m, n_rep } = self.decoding {
            if n_rep == 0 || !(dt_m >= 0.0) {
                return bad("time multiplexing needs n_rep >= 1 and dt_m >= 0".into());
            }
        }
        if let Some(b) = self.bootstrap {
            if b.sets == 0 || b.set_size == 0 {
                return bad("bootstrap needs sets >= 1 and set_size >= 1".into());
            }
        }
        if !(self.diagnostics.dt > 0.0) || !(self.diagnostics.horizon > 0.0) || self.diagnostics.n_inputs == 0 {
            return bad("diagnostics need dt > 0, horizon > 0 and n_inputs >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
