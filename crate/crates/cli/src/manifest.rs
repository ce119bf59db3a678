//! One `manifest.json` per output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;

use crate::Invalid;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: &'static str,
    /// Resolved settings; loadable again with `--config`.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Not reproducible; everything else is.
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_wall_times_s: Option<Vec<f64>>,
}

impl Manifest {
    pub fn new(command: &'static str, config: &impl Serialize) -> Result<Manifest> {
        Ok(Manifest {
            tool: "pathsim",
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
            epoch_wall_times_s: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Creates `dir` and refuses to overwrite any of `files` (or an existing
/// manifest) unless `force` is set.
pub fn prepare_out(dir: &Path, files: &[&str], force: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    if !force {
        for p in paths.iter().chain(std::iter::once(&dir.join(MANIFEST_FILE))) {
            if p.exists() {
                return Err(Invalid(format!("{} exists; pass --force to overwrite", p.display())).into());
            }
        }
    }
    Ok(paths)
}
