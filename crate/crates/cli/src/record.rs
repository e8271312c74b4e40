use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// One JSON line per invocation: what ran, with which settings, and
/// checksums of everything it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<Artifact>,
    pub wall_time_secs: f64,
    pub status: &'static str,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_secs: 0.0,
            status: "ok",
            error: None,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Records a written file with its checksum.
    pub fn output(&mut self, path: &Path) -> msnn::Result<()> {
        let bytes = fs::read(path).map_err(|e| msnn::Error::Format(format!("cannot re-read {}: {e}", path.display())))?;
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
