//! Data preparation and cached feature encoding.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use nqk_core::decode::{decode, FeatureLayout, MeasurementNoise};
use nqk_core::dynamics::{sample_disorder, Encoder};
use nqk_core::encode::{filter_and_split, load_idx, project_and_normalize, synthetic_blobs, ProjectedDataset};
use nqk_core::qcore::{purity, DensityMatrix};
use nqk_core::store::{load_matrix, save_matrix, sha256_hex};
use nqk_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DatasetSource, ExperimentConfig};

/// Mixes `tags` into `master` (SplitMix64 finalizer per step).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &t| {
        mix(acc ^ t.wrapping_add(0x9e37_79b9_7f4a_7c15))
    })
}

const SPLIT_TAG: u64 = 1;
const PROJECTION_TAG: u64 = 2;
const NOISE_TAG: u64 = 3;

/// Projected inputs with the training rows first.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub dataset: ProjectedDataset,
    pub n_train: usize,
    pub n_test: usize,
    /// Content key of everything that determined the dataset.
    pub key: String,
}

impl PreparedData {
    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.dataset.inputs[..self.n_train]
    }

    pub fn test_inputs(&self) -> &[Vec<f64>] {
        &self.dataset.inputs[self.n_train..]
    }

    pub fn train_labels(&self) -> &[u8] {
        &self.dataset.labels[..self.n_train]
    }

    pub fn test_labels(&self) -> &[u8] {
        &self.dataset.labels[self.n_train..]
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn preprocess_key(cfg: &ExperimentConfig) -> Result<String> {
    let source = match &cfg.dataset {
        DatasetSource::Idx { images, labels } => json!({
            "images": sha256_hex(&read_input(images)?),
            "labels": sha256_hex(&read_input(labels)?),
        }),
        DatasetSource::Synthetic { separation } => json!({ "separation": separation }),
    };
    let desc = json!({
        "source": source,
        "classes": cfg.classes,
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
        "m": cfg.m_features(),
        "seed": cfg.seed,
    });
    Ok(sha256_hex(desc.to_string().as_bytes()))
}

/// Loads, splits, projects and normalizes the configured dataset.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let key = preprocess_key(cfg)?;
    let dataset = match &cfg.dataset {
        DatasetSource::Idx { images, labels } => {
            let raw = load_idx(images, labels)?;
            let split = filter_and_split(&raw, &cfg.classes, cfg.n_train, cfg.n_test, derive_seed(cfg.seed, &[SPLIT_TAG]))?;
            project_and_normalize(&split.data, cfg.m_features(), derive_seed(cfg.seed, &[PROJECTION_TAG]), &split.train)?
        }
        DatasetSource::Synthetic { separation } => synthetic_split(cfg, *separation)?,
    };
    Ok(PreparedData {
        dataset,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        key,
    })
}

fn synthetic_split(cfg: &ExperimentConfig, separation: f64) -> Result<ProjectedDataset> {
    let k = cfg.classes.len();
    let share = |n: usize, c: usize| n / k + usize::from(c < n % k);
    let per_class = share(cfg.n_train, 0) + share(cfg.n_test, 0);
    let blobs = synthetic_blobs(k, per_class, cfg.m_features(), separation, derive_seed(cfg.seed, &[SPLIT_TAG]))?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..k {
        let start = c * per_class;
        let a = share(cfg.n_train, c);
        train.extend(start..start + a);
        test.extend(start + a..start + a + share(cfg.n_test, c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[PROJECTION_TAG]));
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let order: Vec<usize> = train.iter().chain(&test).copied().collect();
    Ok(ProjectedDataset {
        inputs: order.iter().map(|&i| blobs.inputs[i].clone()).collect(),
        labels: order.iter().map(|&i| cfg.classes[blobs.labels[i] as usize]).collect(),
        projection: blobs.projection,
        norm_constant: blobs.norm_constant,
    })
}

pub fn cache_dir(out: &Path) -> PathBuf {
    out.join("cache")
}

fn preprocess_base(out: &Path, key: &str) -> PathBuf {
    cache_dir(out).join(format!("preprocess-{}", &key[..16]))
}

/// Prepared data from the cache when its key matches, computed and stored otherwise.
/// Returns the data, whether it was a cache hit, and the cache base path.
pub fn preprocess_cached(cfg: &ExperimentConfig, out: &Path) -> Result<(PreparedData, bool, PathBuf)> {
    let key = preprocess_key(cfg)?;
    let base = preprocess_base(out, &key);
    if let Ok(ds) = ProjectedDataset::load(&base) {
        if nqk_core::store::load_sidecar(&base)?.meta["extra"]["key"] == json!(key) {
            let data = PreparedData { dataset: ds, n_train: cfg.n_train, n_test: cfg.n_test, key };
            return Ok((data, true, base));
        }
    }
    let data = prepare(cfg)?;
    data.dataset.save(&base, json!({ "key": data.key, "n_train": data.n_train, "n_test": data.n_test }))?;
    Ok((data, false, base))
}

/// Encoded and decoded features of one `(disorder seed, gamma)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCell {
    pub disorder_seed: u64,
    pub gamma: f64,
    pub layout: FeatureLayout,
    pub train: DMatrix<f64>,
    pub test: DMatrix<f64>,
    pub train_labels: Vec<u8>,
    pub test_labels: Vec<u8>,
    /// Purity of each encoded training state.
    pub train_purities: Vec<f64>,
    /// Purity of the average encoded training state.
    pub purity_of_mean: f64,
    /// Width of the measurement noise already added to the features.
    pub noise_sigma: f64,
}

impl FeatureCell {
    pub fn mean_purity(&self) -> f64 {
        self.train_purities.iter().sum::<f64>() / self.train_purities.len() as f64
    }
}

/// Failure of one cell, with the input that broke it when known.
#[derive(Debug)]
pub struct CellError {
    pub disorder_seed: u64,
    pub gamma: f64,
    pub input_index: Option<usize>,
    pub source: Error,
}

impl std::fmt::Display for CellError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cell (seed {}, gamma {})", self.disorder_seed, self.gamma)?;
        if let Some(i) = self.input_index {
            write!(f, ", input {i}")?;
        }
        write!(f, ": {}", self.source)
    }
}

/// Seed of the measurement-noise streams of a cell.
pub fn noise_seed(master: u64, disorder_seed: u64, gamma: f64) -> u64 {
    derive_seed(master, &[NOISE_TAG, disorder_seed, gamma.to_bits()])
}

/// Adds measurement noise to each row; row `i` uses stream `offset + i`.
pub fn add_noise_rows(m: &mut DMatrix<f64>, noise: &MeasurementNoise, offset: u64) {
    for i in 0..m.nrows() {
        let mut row: Vec<f64> = m.row(i).iter().copied().collect();
        noise.apply_in_place(&mut row, offset + i as u64);
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
}

/// Encodes every input of `data` for one disorder seed and dephasing rate,
/// then applies the configured measurement noise.
pub fn encode_cell(cfg: &ExperimentConfig, data: &PreparedData, disorder_seed: u64, gamma: f64) -> std::result::Result<FeatureCell, CellError> {
    let fail = |input_index, source| CellError { disorder_seed, gamma, input_index, source };
    let params = sample_disorder(cfg.n_sites, disorder_seed)
        .map_err(|e| fail(None, e))?
        .with_dephasing(gamma);
    let encoder = Encoder::new(&params, cfg.encoding, cfg.step_policy).map_err(|e| fail(None, e))?;
    let layout = cfg.decoding.layout(cfg.n_sites);
    let results: Vec<std::result::Result<(Vec<f64>, DensityMatrix), (usize, Error)>> = data
        .dataset
        .inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let state = encoder.encode(x).map_err(|e| (i, e))?;
            let f = decode(encoder.model(), &state, &cfg.decoding, encoder.policy()).map_err(|e| (i, e))?;
            Ok((f.values, state))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut states = Vec::with_capacity(data.n_train);
    for (i, r) in results.into_iter().enumerate() {
        let (values, state) = r.map_err(|(i, e)| fail(Some(i), e))?;
        rows.push(values);
        if i < data.n_train {
            states.push(state);
        }
    }
    let train_purities = states.iter().map(purity).collect();
    let purity_of_mean = purity(&DensityMatrix::mean(&states).map_err(|e| fail(None, e))?);
    let p = layout.len();
    let mut train = DMatrix::from_fn(data.n_train, p, |i, j| rows[i][j]);
    let mut test = DMatrix::from_fn(data.n_test, p, |i, j| rows[data.n_train + i][j]);
    if cfg.measurement_noise > 0.0 {
        let noise = MeasurementNoise::new(cfg.measurement_noise, noise_seed(cfg.seed, disorder_seed, gamma)).map_err(|e| fail(None, e))?;
        add_noise_rows(&mut train, &noise, 0);
        add_noise_rows(&mut test, &noise, data.n_train as u64);
    }
    Ok(FeatureCell {
        disorder_seed,
        gamma,
        layout,
        train,
        test,
        train_labels: data.train_labels().to_vec(),
        test_labels: data.test_labels().to_vec(),
        train_purities,
        purity_of_mean,
        noise_sigma: cfg.measurement_noise,
    })
}

fn cell_key(cfg: &ExperimentConfig, data: &PreparedData, disorder_seed: u64, gamma: f64) -> String {
    let desc = json!({
        "data": data.key,
        "n_sites": cfg.n_sites,
        "encoding": cfg.encoding,
        "decoding": cfg.decoding,
        "noise": cfg.measurement_noise,
        "seed": cfg.seed,
        "disorder_seed": disorder_seed,
        "gamma": gamma,
        "policy": cfg.step_policy,
    });
    sha256_hex(desc.to_string().as_bytes())
}

#[derive(Serialize, Deserialize)]
struct CellMeta {
    key: String,
    disorder_seed: u64,
    gamma: f64,
    layout: FeatureLayout,
    n_train: usize,
    train_labels: Vec<u8>,
    test_labels: Vec<u8>,
    train_purities: Vec<f64>,
    purity_of_mean: f64,
    noise_sigma: f64,
}

pub fn cell_base(out: &Path, key: &str) -> PathBuf {
    cache_dir(out).join(format!("features-{}", &key[..16]))
}

fn load_cell(base: &Path, key: &str) -> Option<FeatureCell> {
    let (m, side) = load_matrix(base).ok()?;
    let meta: CellMeta = serde_json::from_value(side.meta).ok()?;
    if meta.key != key || meta.n_train > m.nrows() {
        return None;
    }
    Some(FeatureCell {
        disorder_seed: meta.disorder_seed,
        gamma: meta.gamma,
        layout: meta.layout,
        train: m.rows(0, meta.n_train).into_owned(),
        test: m.rows(meta.n_train, m.nrows() - meta.n_train).into_owned(),
        train_labels: meta.train_labels,
        test_labels: meta.test_labels,
        train_purities: meta.train_purities,
        purity_of_mean: meta.purity_of_mean,
        noise_sigma: meta.noise_sigma,
    })
}

fn store_cell(base: &Path, key: &str, cell: &FeatureCell) -> Result<()> {
    let mut all = DMatrix::zeros(cell.train.nrows() + cell.test.nrows(), cell.train.ncols());
    all.rows_mut(0, cell.train.nrows()).copy_from(&cell.train);
    all.rows_mut(cell.train.nrows(), cell.test.nrows()).copy_from(&cell.test);
    let meta = CellMeta {
        key: key.to_string(),
        disorder_seed: cell.disorder_seed,
        gamma: cell.gamma,
        layout: cell.layout,
        n_train: cell.train.nrows(),
        train_labels: cell.train_labels.clone(),
        test_labels: cell.test_labels.clone(),
        train_purities: cell.train_purities.clone(),
        purity_of_mean: cell.purity_of_mean,
        noise_sigma: cell.noise_sigma,
    };
    save_matrix(base, &all, serde_json::to_value(meta)?)?;
    Ok(())
}

/// Result of one cell of a sweep.
pub struct CellOutcome {
    pub disorder_seed: u64,
    pub gamma: f64,
    pub cache_hit: bool,
    pub path: PathBuf,
    pub result: std::result::Result<FeatureCell, CellError>,
}

/// Encodes (or loads) every `(disorder seed, gamma)` cell. A failing cell is
/// reported and the others still run.
pub fn encode_all(cfg: &ExperimentConfig, data: &PreparedData, out: &Path, progress: bool) -> Vec<CellOutcome> {
    let mut outcomes = Vec::new();
    for &gamma in &cfg.gammas {
        for &seed in &cfg.disorder_seeds {
            let key = cell_key(cfg, data, seed, gamma);
            let base = cell_base(out, &key);
            let (result, cache_hit) = match load_cell(&base, &key) {
                Some(cell) => (Ok(cell), true),
                None => {
                    let r = encode_cell(cfg, data, seed, gamma).and_then(|cell| {
                        store_cell(&base, &key, &cell)
                            .map(|_| cell)
                            .map_err(|source| CellError { disorder_seed: seed, gamma, input_index: None, source })
                    });
                    (r, false)
                }
            };
            if progress {
                let status = match (&result, cache_hit) {
                    (Err(e), _) => format!("failed: {e}"),
                    (Ok(_), true) => "cached".to_string(),
                    (Ok(_), false) => "encoded".to_string(),
                };
                eprintln!("[encode] seed {seed} gamma {gamma}: {} inputs {status}", data.dataset.inputs.len());
            }
            outcomes.push(CellOutcome { disorder_seed: seed, gamma, cache_hit, path: base, result });
        }
    }
    outcomes
}
