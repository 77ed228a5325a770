//! Files, experiment orchestration and analysis behind the `normkd` CLI.

pub mod analysis;
pub mod cache;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod experiment;
pub mod gradsuite;
pub mod metrics;
pub mod model;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Env var that overrides the configured seed list (comma-separated).
pub const SEED_ENV: &str = "NORMKD_SEED";

/// Writes `bytes` to a temp file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
