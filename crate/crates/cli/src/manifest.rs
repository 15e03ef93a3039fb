//! `manifest.json`: what went into a run and what came out.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    /// Inputs: the path as given. Outputs: relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Effective configuration, as written to `config.txt`.
    pub config: String,
    pub normalized: bool,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub fallback_steps: Vec<usize>,
    pub error: Option<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn digest(path: &Path, label: String) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: label,
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming {} into place", tmp.display()))?;
    Ok(())
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_atomic(&dir.join(MANIFEST_NAME), json.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Outputs that are missing or whose checksum no longer matches.
    pub fn mismatched_outputs(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| match digest(&dir.join(&o.path), o.path.clone()) {
                Ok(d) => d.sha256 != o.sha256,
                Err(_) => true,
            })
            .map(|o| o.path.clone())
            .collect()
    }
}
