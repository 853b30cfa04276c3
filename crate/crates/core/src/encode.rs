//! Classical preprocessing: IDX ingestion, 28x28 -> 8x8 area downsampling,
//! random projection, normalization and class-stratified splits.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store;

pub const IMAGE_SIDE: usize = 28;
pub const SMALL_SIDE: usize = 8;
pub const SMALL_LEN: usize = SMALL_SIDE * SMALL_SIDE;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale images scaled to `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(images: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some((i, img)) = images.iter().enumerate().find(|(_, im)| im.len() != IMAGE_SIDE * IMAGE_SIDE) {
            return Err(Error::invalid(format!(
                "image {i} has {} pixels, expected {}",
                img.len(),
                IMAGE_SIDE * IMAGE_SIDE
            )));
        }
        Ok(RawDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        RawDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Parse {
                offset: 0,
                msg: format!("{}: bad gzip stream: {e}", path.display()),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            msg: format!("truncated header: need 4 bytes, file has {}", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("unexpected magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file into row-major images scaled by `1/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Parse {
            offset: 8,
            msg: format!("images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"),
        });
    }
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * size {
        let complete = body.len() / size;
        return Err(Error::Parse {
            offset: (16 + complete * size) as u64,
            msg: format!("truncated file: header declares {count} images, only {complete} complete"),
        });
    }
    Ok(body
        .chunks_exact(size)
        .take(count)
        .map(|c| c.iter().map(|&p| p as f64 / 255.0).collect())
        .collect())
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Parse {
            offset: (8 + body.len()) as u64,
            msg: format!("truncated file: header declares {count} labels, found {}", body.len()),
        });
    }
    Ok(body[..count].to_vec())
}

/// Loads an image/label IDX pair. Gzipped files are detected by their magic bytes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<RawDataset> {
    let images = parse_idx_images(&read_maybe_gz(images_path.as_ref())?)?;
    let label_bytes = read_maybe_gz(labels_path.as_ref())?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.len() != labels.len() {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("count mismatch: {} images vs {} labels", images.len(), labels.len()),
        });
    }
    Ok(RawDataset { images, labels })
}

/// `to x from` matrix averaging each output cell over its fractional share of input pixels.
pub fn area_weights(from: usize, to: usize) -> DMatrix<f64> {
    let scale = from as f64 / to as f64;
    DMatrix::from_fn(to, from, |i, p| {
        let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
        let overlap = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
        overlap / scale
    })
}

/// Area-weighted 28x28 -> 8x8 reduction, row-major in and out.
pub fn downsample(image: &[f64]) -> Result<Vec<f64>> {
    if image.len() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::invalid(format!(
            "downsample expects {} pixels, got {}",
            IMAGE_SIDE * IMAGE_SIDE,
            image.len()
        )));
    }
    let r = area_weights(IMAGE_SIDE, SMALL_SIDE);
    // Row-major data read as column-major gives the transpose.
    let img_t = DMatrix::from_column_slice(IMAGE_SIDE, IMAGE_SIDE, image);
    let small_t = &r * img_t * r.transpose();
    Ok(small_t.as_slice().to_vec())
}

/// Projected and normalized inputs for every row of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    /// `64 x M` projection.
    pub projection: DMatrix<f64>,
    pub norm_constant: f64,
}

impl ProjectedDataset {
    pub fn n_features(&self) -> usize {
        self.projection.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> (Vec<Vec<f64>>, Vec<u8>) {
        (
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Writes the inputs as a flat matrix plus a sidecar carrying the rest.
    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<store::Sidecar> {
        let m = rows_to_matrix(&self.inputs, self.n_features())?;
        let meta = serde_json::json!({
            "labels": self.labels,
            "projection": self.projection.as_slice(),
            "projection_shape": [self.projection.nrows(), self.projection.ncols()],
            "norm_constant": self.norm_constant,
            "extra": extra,
        });
        store::save_matrix(path, &m, meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (m, side) = store::load_matrix(path)?;
        let meta = side.meta;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::invalid(format!("sidecar lacks `{k}`")));
        let labels: Vec<u8> = serde_json::from_value(field("labels")?)?;
        let proj: Vec<f64> = serde_json::from_value(field("projection")?)?;
        let shape: [usize; 2] = serde_json::from_value(field("projection_shape")?)?;
        let norm_constant: f64 = serde_json::from_value(field("norm_constant")?)?;
        if proj.len() != shape[0] * shape[1] || labels.len() != m.nrows() {
            return Err(Error::invalid("cached dataset sidecar is inconsistent"));
        }
        Ok(ProjectedDataset {
            inputs: matrix_to_rows(&m),
            labels,
            projection: DMatrix::from_column_slice(shape[0], shape[1], &proj),
            norm_constant,
        })
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Result<DMatrix<f64>> {
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::invalid(format!("row {i} has length {}, expected {width}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Uniform `[-1, 1]` matrix of the given shape from a seed.
pub fn random_projection(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
    DMatrix::from_row_slice(rows, cols, &v)
}

/// Population standard deviation over every entry of the given rows.
fn pooled_std<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> (f64, usize) {
    let vals: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = vals.len();
    if n == 0 {
        return (0.0, 0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (var.sqrt(), n)
}

/// Downsamples, projects onto `m_features` random directions and divides by
/// three times the pooled standard deviation of the training features.
pub fn project_and_normalize(
    dataset: &RawDataset,
    m_features: usize,
    seed: u64,
    train_indices: &[usize],
) -> Result<ProjectedDataset> {
    if m_features == 0 {
        return Err(Error::invalid("need at least one projected feature"));
    }
    if train_indices.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!("train index {bad} out of range for {} images", dataset.len())));
    }
    let w = random_projection(SMALL_LEN, m_features, seed);
    let raw: Vec<Vec<f64>> = dataset
        .images
        .par_iter()
        .map(|img| {
            let small = downsample(img)?;
            Ok((0..m_features)
                .map(|j| (0..SMALL_LEN).map(|p| small[p] * w[(p, j)]).sum())
                .collect())
        })
        .collect::<Result<_>>()?;
    let (std, _) = pooled_std(train_indices.iter().map(|&i| &raw[i]));
    if !(std > 0.0) {
        return Err(Error::DegenerateNormalization(
            "training features have zero standard deviation".into(),
        ));
    }
    let norm = 3.0 * std;
    Ok(ProjectedDataset {
        inputs: raw.into_iter().map(|r| r.into_iter().map(|v| v / norm).collect()).collect(),
        labels: dataset.labels.clone(),
        projection: w,
        norm_constant: norm,
    })
}

/// Selected images with train rows first, then test rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub data: RawDataset,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Keeps only `classes`, draws a class-balanced train and test set without
/// overlap and shuffles each split. Remainders go to the earliest classes.
pub fn filter_and_split(dataset: &RawDataset, classes: &[u8], n_train: usize, n_test: usize, seed: u64) -> Result<Split> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes requested"));
    }
    let k = classes.len();
    let share = |total: usize, c: usize| total / k + usize::from(c < total % k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, &label) in classes.iter().enumerate() {
        let mut pool: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == label).collect();
        let (a, b) = (share(n_train, c), share(n_test, c));
        if pool.len() < a + b {
            return Err(Error::invalid(format!(
                "class {label} has {} samples, {} needed ({a} train + {b} test)",
                pool.len(),
                a + b
            )));
        }
        pool.shuffle(&mut rng);
        train.extend_from_slice(&pool[..a]);
        test.extend_from_slice(&pool[a..a + b]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let order: Vec<usize> = train.iter().chain(&test).copied().collect();
    Ok(Split {
        data: dataset.subset(&order),
        train: (0..train.len()).collect(),
        test: (train.len()..order.len()).collect(),
    })
}

/// Unit-variance Gaussian blobs whose means sit pairwise `separation` apart,
/// normalized by three times the pooled standard deviation. Labels are
/// `0..n_classes`.
pub fn synthetic_blobs(n_classes: usize, n_per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<ProjectedDataset> {
    if n_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(Error::invalid("synthetic blobs need positive class count, size and dimension"));
    }
    if n_classes > 2 && dim < n_classes {
        return Err(Error::invalid(format!(
            "{n_classes} equidistant means need dim >= {n_classes}, got {dim}"
        )));
    }
    let mean = |c: usize| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        if dim >= n_classes {
            m[c] = separation / std::f64::consts::SQRT_2;
        } else {
            m[0] = c as f64 * separation;
        }
        m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n_classes * n_per_class);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for c in 0..n_classes {
        let mu = mean(c);
        for _ in 0..n_per_class {
            inputs.push(mu.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
            labels.push(c as u8);
        }
    }
    let (std, _) = pooled_std(inputs.iter());
    if !(std > 0.0) {
        return Err(Error::DegenerateNormalization("blob features have zero spread".into()));
    }
    let norm = 3.0 * std;
    for row in &mut inputs {
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(ProjectedDataset {
        inputs,
        labels,
        projection: DMatrix::identity(dim, dim),
        norm_constant: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn idx_images(n: u32, rows: u32, cols: u32, magic: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [magic, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..(n * rows * cols) as usize).map(fill));
        b
    }

    fn idx_labels(n: u32, labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&n.to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_ten_images() {
        let imgs = parse_idx_images(&idx_images(10, 28, 28, IMAGE_MAGIC, |i| (i % 256) as u8)).unwrap();
        assert_eq!(imgs.len(), 10);
        assert_eq!(imgs[0][255], 1.0);
        assert_eq!(imgs[0][1], 1.0 / 255.0);
    }

    #[test]
    fn bad_magic_is_reported() {
        let err = parse_idx_images(&idx_images(1, 28, 28, 0x802, |_| 0)).unwrap_err();
        assert!(err.to_string().contains("unexpected magic"), "{err}");
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut b = idx_images(3, 28, 28, IMAGE_MAGIC, |_| 0);
        b.truncate(16 + 784 + 100);
        match parse_idx_images(&b).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 16 + 784),
            e => panic!("{e}"),
        }
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Parse { .. })));
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&ip, idx_images(10, 28, 28, IMAGE_MAGIC, |_| 7)).unwrap();
        std::fs::write(&lp, idx_labels(9, &[3; 9])).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("mismatch"), "{err}");
        std::fs::write(&lp, idx_labels(10, &[3; 10])).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap().len(), 10);
        assert!(load_idx(dir.path().join("missing"), &lp).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut e = GzEncoder::new(Vec::new(), Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        let (ip, lp) = (dir.path().join("i.gz"), dir.path().join("l.gz"));
        std::fs::write(&ip, gz(&idx_images(2, 28, 28, IMAGE_MAGIC, |i| (i % 3) as u8))).unwrap();
        std::fs::write(&lp, gz(&idx_labels(2, &[6, 8]))).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.labels, vec![6, 8]);
    }

    #[test]
    fn area_weights_rows_sum_to_one() {
        let r = area_weights(28, 8);
        for i in 0..8 {
            assert_abs_diff_eq!(r.row(i).sum(), 1.0, epsilon = 1e-15);
        }
        // First output pixel covers 3.5 input pixels.
        assert_abs_diff_eq!(r[(0, 3)], 0.5 / 3.5, epsilon = 1e-15);
        assert_eq!(r[(0, 4)], 0.0);
    }

    #[test]
    fn downsample_constants() {
        assert!(downsample(&[1.0; 784]).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(downsample(&[0.0; 784]).unwrap().iter().all(|&v| v == 0.0));
        assert!(downsample(&[0.0; 10]).is_err());
    }

    #[test]
    fn downsample_top_left_block() {
        // A bright 3x3 block at the corner lands entirely in output pixel (0, 0).
        let mut img = vec![0.0; 784];
        for r in 0..3 {
            for c in 0..3 {
                img[r * 28 + c] = 1.0;
            }
        }
        let out = downsample(&img).unwrap();
        assert_abs_diff_eq!(out[0], 9.0 / 12.25, epsilon = 1e-14);
        assert!(out[1..].iter().all(|&v| v == 0.0));
        // Row-major orientation: a block in row 0, cols 25..28 maps to out[7].
        let mut img = vec![0.0; 784];
        img[27] = 1.0;
        let out = downsample(&img).unwrap();
        assert!(out[7] > 0.0 && out[56] == 0.0);
    }

    proptest! {
        #[test]
        fn downsample_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..784).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..784).map(|_| rng.random::<f64>()).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let (dx, dy, dm) = (downsample(&x).unwrap(), downsample(&y).unwrap(), downsample(&mix).unwrap());
            for i in 0..64 {
                prop_assert!((dm[i] - (a * dx[i] + b * dy[i])).abs() <= 1e-12);
            }
        }
    }

    fn random_raw(n: usize, seed: u64) -> RawDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = [3u8, 6, 8, 1];
        RawDataset::new(
            (0..n).map(|_| (0..784).map(|_| rng.random::<f64>()).collect()).collect(),
            (0..n).map(|i| labels[i % 4]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalized_train_std_is_one_third() {
        let d = random_raw(40, 1);
        let train: Vec<usize> = (0..30).collect();
        let p = project_and_normalize(&d, 10, 5, &train).unwrap();
        let (std, n) = pooled_std(train.iter().map(|&i| &p.inputs[i]));
        assert_eq!(n, 300);
        assert_abs_diff_eq!(std, 1.0 / 3.0, epsilon = 1e-12);
        assert!(p.projection.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(p.projection.shape(), (64, 10));
    }

    #[test]
    fn projection_is_seeded() {
        assert_eq!(random_projection(64, 10, 3), random_projection(64, 10, 3));
        assert_ne!(random_projection(64, 10, 3), random_projection(64, 10, 4));
    }

    #[test]
    fn constant_dataset_is_degenerate() {
        let d = RawDataset::new(vec![vec![0.0; 784]; 5], vec![3; 5]).unwrap();
        let err = project_and_normalize(&d, 4, 0, &[0, 1, 2]).unwrap_err();
        assert!(matches!(err, Error::DegenerateNormalization(_)));
        assert!(project_and_normalize(&d, 4, 0, &[]).is_err());
    }

    #[test]
    fn test_images_do_not_leak_into_normalization() {
        let d = random_raw(20, 2);
        let train: Vec<usize> = (0..12).collect();
        let a = project_and_normalize(&d, 6, 9, &train).unwrap();
        let mut d2 = d.clone();
        for i in 12..20 {
            d2.images[i] = vec![1.0; 784];
        }
        let b = project_and_normalize(&d2, 6, 9, &train).unwrap();
        assert_eq!(a.norm_constant, b.norm_constant);
    }

    #[test]
    fn split_is_disjoint_balanced_and_seeded() {
        let d = random_raw(400, 3);
        let s = filter_and_split(&d, &[3, 6, 8], 60, 21, 11).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (60, 21));
        assert!(s.data.labels.iter().all(|l| [3, 6, 8].contains(l)));
        let count = |idx: &[usize], l: u8| idx.iter().filter(|&&i| s.data.labels[i] == l).count();
        assert_eq!([count(&s.train, 3), count(&s.train, 6), count(&s.train, 8)], [20, 20, 20]);
        assert_eq!([count(&s.test, 3), count(&s.test, 6), count(&s.test, 8)], [7, 7, 7]);
        // Disjoint at the level of original images.
        let mut seen: Vec<&Vec<f64>> = s.data.images.iter().collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 81);
        assert_eq!(s, filter_and_split(&d, &[3, 6, 8], 60, 21, 11).unwrap());
        assert_ne!(s.data, filter_and_split(&d, &[3, 6, 8], 60, 21, 12).unwrap().data);
    }

    #[test]
    fn split_names_short_class() {
        let d = random_raw(40, 3);
        let err = filter_and_split(&d, &[3, 6, 8], 30, 6, 0).unwrap_err();
        assert!(err.to_string().contains("class 3"), "{err}");
    }

    #[test]
    fn blobs_are_reproducible_and_labeled() {
        let a = synthetic_blobs(3, 10, 4, 5.0, 1).unwrap();
        assert_eq!(a, synthetic_blobs(3, 10, 4, 5.0, 1).unwrap());
        assert_eq!(a.inputs.len(), 30);
        assert_eq!(a.labels.iter().filter(|&&l| l == 2).count(), 10);
        let (std, _) = pooled_std(a.inputs.iter());
        assert_abs_diff_eq!(std, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn blob_means_are_equidistant() {
        let d = synthetic_blobs(3, 4000, 3, 6.0, 2).unwrap();
        let means: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let rows: Vec<&Vec<f64>> = d.inputs.iter().zip(&d.labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
                (0..3).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64 * d.norm_constant).collect()
            })
            .collect();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let dist: f64 = (0..3).map(|j| (means[a][j] - means[b][j]).powi(2)).sum::<f64>().sqrt();
            assert!((dist - 6.0).abs() < 0.15, "{dist}");
        }
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synthetic_blobs(2, 5, 3, 2.0, 4).unwrap();
        d.save(dir.path().join("blobs"), serde_json::json!({"seed": 4})).unwrap();
        assert_eq!(ProjectedDataset::load(dir.path().join("blobs")).unwrap(), d);
    }
}
