//! Per-run provenance: what ran, with which fully resolved parameters, on
//! which files. Replaying a manifest re-runs the same subcommand with the
//! same parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_json, write_json};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved parameters (defaults, then config file, then flags).
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
    /// Worker threads the run was allowed; results do not depend on it.
    pub jobs: Option<usize>,
}

impl RunManifest {
    pub fn new(subcommand: &str, params: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            params,
            seed,
            tool_version: TOOL_VERSION.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
            jobs: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        read_json(path)
    }
}

/// Default manifest location for a run whose main output is `out`: inside
/// it when it is a directory, next to it otherwise.
pub fn manifest_path_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("pattern", serde_json::json!({"period": 4, "sigma": 0.0}), Some(7));
        m.outputs.push(dir.path().join("p.pfm"));
        m.wall_time_s = 0.25;
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }

    #[test]
    fn default_locations() {
        assert_eq!(manifest_path_for(Path::new("a/p.pfm"), false), PathBuf::from("a/p.manifest.json"));
        assert_eq!(manifest_path_for(Path::new("out"), true), PathBuf::from("out/manifest.json"));
    }
}
