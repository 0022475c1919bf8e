//! Artifact I/O: atomic writes, fixed-format numbers, cell files, manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;

/// Ten significant digits in scientific notation: enough to reconstruct the
/// estimate to visual precision and stable across runs.
pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.9e}")
}

pub(crate) fn fmt_opt_real(x: Option<f64>) -> String {
    match x {
        Some(v) => fmt_real(v),
        None => "nan".to_owned(),
    }
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes via a sibling temp file and rename, so readers (and resumed runs)
/// never observe a torn file.
pub(crate) fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::malformed("json artifact", e.to_string()))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Loads a cell artifact. Missing or unparseable files read as `None` (the
/// cell is recomputed); other I/O failures are real errors.
pub(crate) fn load_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match fs::read(path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// One completed cell, as recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellManifest {
    /// Cell file stem under `cells/`, e.g. `n3_k16`.
    pub id: String,
    /// Stream label the cell's seeds were derived from.
    pub stream_label: String,
    pub completed_at_unix: u64,
}

/// Run description written next to the CSV artifacts. Everything needed to
/// reproduce the run byte-for-byte lives in `config`; the timestamps are the
/// only fields expected to differ between reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellManifest>,
    pub csv_files: Vec<String>,
    pub created_at_unix: u64,
    pub completed_at_unix: u64,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::malformed("manifest", e.to_string()))
}

pub(crate) fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    save_json(&path, manifest)?;
    Ok(path)
}
