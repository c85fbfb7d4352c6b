use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// One per command invocation, written next to the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started: String,
    pub finished: String,
    /// `sha256("blob <len>\0" ‖ bytes)` of the checkpoint produced or read.
    pub checkpoint_hash: Option<String>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            config_hash: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
            finished: String::new(),
            checkpoint_hash: None,
        }
    }

    pub fn finish(mut self, path: &Path, force: bool) -> Result<(), CliError> {
        self.finished = now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_new(path, text.as_bytes(), force)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style object hash: the content is prefixed with `blob <len>\0`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn ensure_absent(path: &Path, force: bool) -> Result<(), CliError> {
    if !force && path.exists() {
        return Err(CliError::OutputExists(path.to_path_buf()));
    }
    Ok(())
}

/// Writes `bytes` to `path` via a temporary sibling; refuses to replace an
/// existing file unless `force`.
pub fn write_new(path: &Path, bytes: &[u8], force: bool) -> Result<(), CliError> {
    ensure_absent(path, force)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}
