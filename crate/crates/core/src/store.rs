//! Flat little-endian `f64` matrix files with JSON sidecars.
//!
//! `save_matrix("dir/name", ..)` writes `dir/name.bin` (row-major values) and
//! `dir/name.json` (shape, SHA-256 of the binary, free-form metadata). Both
//! files are written to a temporary name first and renamed into place.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
    pub meta: serde_json::Value,
}

pub fn bin_path(base: &Path) -> PathBuf {
    with_suffix(base, "bin")
}

pub fn json_path(base: &Path) -> PathBuf {
    with_suffix(base, "json")
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn save_matrix(base: impl AsRef<Path>, m: &DMatrix<f64>, meta: serde_json::Value) -> Result<Sidecar> {
    let base = base.as_ref();
    let bytes = encode_matrix(m);
    let side = Sidecar {
        rows: m.nrows(),
        cols: m.ncols(),
        sha256: sha256_hex(&bytes),
        meta,
    };
    write_atomic(&bin_path(base), &bytes)?;
    write_atomic(&json_path(base), &serde_json::to_vec_pretty(&side)?)?;
    Ok(side)
}

pub fn load_sidecar(base: impl AsRef<Path>) -> Result<Sidecar> {
    Ok(serde_json::from_slice(&std::fs::read(json_path(base.as_ref()))?)?)
}

/// Reads a matrix back, verifying its size and content hash.
pub fn load_matrix(base: impl AsRef<Path>) -> Result<(DMatrix<f64>, Sidecar)> {
    let base = base.as_ref();
    let side = load_sidecar(base)?;
    let bytes = std::fs::read(bin_path(base))?;
    if bytes.len() != side.rows * side.cols * 8 {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            msg: format!("expected {} values, file holds {} bytes", side.rows * side.cols, bytes.len()),
        });
    }
    if sha256_hex(&bytes) != side.sha256 {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("{} does not match its recorded hash", bin_path(base).display()),
        });
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((DMatrix::from_row_slice(side.rows, side.cols, &vals), side))
}
