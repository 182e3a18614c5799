//! Run manifests: every CLI invocation records what it did beside its
//! primary output, including failed runs (with the error message), so any
//! artifact can be traced back to its inputs and seed.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_digest: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: 0.0,
            error: None,
        }
    }
}

/// Writes `<anchor>.manifest.json`.
pub fn write_manifest(manifest: &RunManifest, anchor: &Path) -> Result<PathBuf> {
    let mut name = anchor.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    let path = anchor.with_file_name(name);
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
