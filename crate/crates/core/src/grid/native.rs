use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{parse_matpower, GridCase, ImportOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseFormat {
    /// The native JSON schema (serialized [`GridCase`]).
    Json,
    /// MATPOWER-style `.m` text.
    Matpower,
}

impl CaseFormat {
    /// Guess from the file extension; `.m` is MATPOWER, everything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("m") => CaseFormat::Matpower,
            _ => CaseFormat::Json,
        }
    }
}

pub fn load_case(path: &Path, format: CaseFormat) -> Result<GridCase> {
    load_case_with(path, format, &ImportOptions::default())
}

pub fn load_case_with(path: &Path, format: CaseFormat, opts: &ImportOptions) -> Result<GridCase> {
    let text = fs::read_to_string(path)?;
    match format {
        CaseFormat::Matpower => parse_matpower(&text, path, opts),
        CaseFormat::Json => serde_json::from_str(&text).map_err(|e| {
            // serde reports the failing line; keep it in the parse diagnostic
            let line = e.line();
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        }),
    }
}

pub fn save_case(case: &GridCase, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(case)?;
    fs::write(path, text)?;
    Ok(())
}

/// Hex SHA-256 of the canonical JSON encoding of a case.
pub fn case_hash(case: &GridCase) -> String {
    let bytes = serde_json::to_vec(case).expect("case serializes");
    hex::encode(Sha256::digest(&bytes))
}
