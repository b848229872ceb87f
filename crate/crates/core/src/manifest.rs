//! Run manifests: what a command read, wrote and was configured with.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_NAME: &str = "biascorpus";
pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("input drift on {path}: manifest has {expected}, file has {actual}")]
    Drift {
        path: String,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let io = |source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = File::open(path).map_err(io)?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf).map_err(io)?;
            if n == 0 {
                break;
            }
            bytes += n as u64;
            hasher.update(&buf[..n]);
        }
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }
}

/// Sub-seed for a named stage: the first 8 bytes of SHA-256(seed ‖ stage).
pub fn sub_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
pub fn build_timestamp() -> String {
    let at = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    at.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        RunManifest {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            config: BTreeMap::new(),
            seed,
            sub_seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: build_timestamp(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.config.insert(key.into(), value.to_string());
        self
    }

    /// Derives and records the sub-seed for `stage`.
    pub fn stage_seed(&mut self, stage: &str) -> u64 {
        let s = sub_seed(self.seed, stage);
        self.sub_seeds.insert(stage.to_string(), s);
        s
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Re-hashes every input and reports the first drift.
    pub fn verify_inputs(&self) -> Result<(), ManifestError> {
        for d in &self.inputs {
            let now = FileDigest::of(&d.path)?;
            if now.sha256 != d.sha256 {
                return Err(ManifestError::Drift {
                    path: d.path.clone(),
                    expected: d.sha256.clone(),
                    actual: now.sha256,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// `out.jsonl` → `out.jsonl.manifest.json`.
pub fn manifest_path(output: impl AsRef<Path>) -> PathBuf {
    let mut s = output.as_ref().as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}
