//! CSV/JSON emission and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nqk_core::store::{sha256_hex, write_atomic};
use nqk_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Output path (relative to the output directory) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    /// Merges `files` into the manifest in `out`, replacing it atomically.
    pub fn record(out: &Path, config_hash: &str, files: &[PathBuf], wall_clock_seconds: f64) -> Result<RunManifest> {
        let path = out.join(MANIFEST_FILE);
        let mut m: RunManifest = match std::fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b).unwrap_or_default(),
            Err(_) => RunManifest::default(),
        };
        if m.config_hash != config_hash {
            m.artifacts.clear();
        }
        m.config_hash = config_hash.to_string();
        for f in files {
            let rel = f.strip_prefix(out).unwrap_or(f).to_string_lossy().into_owned();
            m.artifacts.insert(rel, sha256_hex(&std::fs::read(f)?));
        }
        m.wall_clock_seconds = wall_clock_seconds;
        m.versions.insert("nqk".into(), env!("CARGO_PKG_VERSION").into());
        write_json(&path, &m)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: f64,
        b: &'static str,
    }

    #[test]
    fn csv_quotes_and_uses_dot_decimal() {
        let s = String::from_utf8(csv_bytes(&[Row { a: 0.5, b: "x,y" }]).unwrap()).unwrap();
        assert_eq!(s, "a,b\n0.5,\"x,y\"\n");
    }

    #[test]
    fn manifest_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.csv");
        std::fs::write(&f, b"abc").unwrap();
        let m = RunManifest::record(dir.path(), "h", &[f], 1.0).unwrap();
        assert_eq!(m.artifacts["x.csv"], sha256_hex(b"abc"));
        let back: RunManifest = serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
