use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Record of one subcommand run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved configuration; valid input for `--config`.
    pub config: serde_json::Value,
    pub tool_version: String,
    pub master_seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

/// Contents of `manifest.json`. Runs writing into the same directory are
/// appended, so a directory always holds exactly one manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub format_version: u32,
    pub runs: Vec<RunManifest>,
}

impl ManifestFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&s)
            .map_err(|e| CliError::Validation(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(CliError::Validation(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn last_run(&self, subcommand: &str) -> Option<&RunManifest> {
        self.runs.iter().rev().find(|r| r.subcommand == subcommand)
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Append `run` to the manifest in `dir`, creating it if needed.
pub fn append_run(dir: &Path, run: RunManifest) -> Result<PathBuf, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let mut file = if path.exists() {
        ManifestFile::read(&path)?
    } else {
        ManifestFile {
            format_version: MANIFEST_FORMAT_VERSION,
            runs: Vec::new(),
        }
    };
    file.runs.push(run);
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}
