use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA: u32 = 1;

/// Versioned envelope around a command's result. Only `payload` is covered
/// by `payload_sha256`; `timing` varies between runs.
#[derive(Debug, Clone)]
pub struct Report {
    pub payload: Value,
    pub elapsed: Duration,
    /// Command-specific timing details.
    pub timing: Option<Value>,
}

impl Report {
    pub fn new<T: Serialize>(payload: &T, elapsed: Duration) -> Result<Self, CliError> {
        let payload = serde_json::to_value(payload).map_err(|e| CliError::Internal(e.to_string()))?;
        Ok(Report {
            payload,
            elapsed,
            timing: None,
        })
    }

    pub fn with_timing(self, timing: Value) -> Self {
        Report {
            timing: Some(timing),
            ..self
        }
    }

    pub fn payload_sha256(&self) -> String {
        // serde_json keeps object keys in a stable order, so the compact
        // encoding is canonical for a given payload.
        sha256_hex(self.payload.to_string().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let doc = json!({
            "schema": SCHEMA,
            "payload": self.payload,
            "payload_sha256": self.payload_sha256(),
            "timing": {
                "elapsed_secs": self.elapsed.as_secs_f64(),
                "detail": self.timing,
            },
        });
        serde_json::to_string_pretty(&doc).expect("JSON values always serialize")
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of an input file.
pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| biasbench_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}
