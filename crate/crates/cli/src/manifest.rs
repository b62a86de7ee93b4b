use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gridcfc::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Inputs of one command; together with the config they determine every
/// primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Simulate {
        case: PathBuf,
    },
    Rank {
        case: PathBuf,
        batch: PathBuf,
    },
    Structural {
        case: PathBuf,
        metrics: Vec<String>,
    },
    Validate {
        case: PathBuf,
        mode: String,
        rankings: Vec<PathBuf>,
        names: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds since the Unix epoch at start.
    pub started: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub case_hash: String,
    pub seed: u64,
    /// Worker count used; outputs do not depend on it.
    pub workers: usize,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
    pub timing: Timing,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// The manifest next to an output file, if any.
    pub fn beside(file: &Path) -> Result<Option<Self>> {
        let dir = file.parent().unwrap_or(Path::new("."));
        let path = dir.join(MANIFEST_FILE);
        if path.is_file() {
            Self::read(&path).map(Some)
        } else {
            Ok(None)
        }
    }
}
