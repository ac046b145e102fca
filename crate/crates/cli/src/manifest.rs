//! Run manifest written next to `reproduce` outputs.
//!
//! The manifest is rewritten after every artifact, so an interrupted run
//! leaves every planned file listed with its status.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use neuronoise_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub kind: &'static str,
    pub status: Status,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub topology: String,
    pub path: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    /// `N * eta` of `W^2 .. W^L`.
    pub amplification: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub status: Status,
    pub artifacts: Vec<Artifact>,
    pub models: Vec<ModelSummary>,
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
    #[serde(skip)]
    file: PathBuf,
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(file: PathBuf, config_json: &[u8], seeds: BTreeMap<String, u64>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            config_hash: sha256_hex(config_json),
            seeds,
            status: Status::Incomplete,
            artifacts: Vec::new(),
            models: Vec::new(),
            wall_clock_seconds: 0.0,
            started: Some(Instant::now()),
            file,
        }
    }

    pub fn plan(&mut self, path: impl Into<String>, kind: &'static str) {
        self.artifacts.push(Artifact {
            path: path.into(),
            kind,
            status: Status::Incomplete,
        });
    }

    pub fn mark_complete(&mut self, path: &str) -> Result<(), Error> {
        if let Some(a) = self.artifacts.iter_mut().find(|a| a.path == path) {
            a.status = Status::Complete;
        }
        self.write()
    }

    pub fn finish(&mut self, status: Status) -> Result<(), Error> {
        self.status = status;
        self.write()
    }

    /// Writes through a temporary file so readers never see half a manifest.
    pub fn write(&mut self) -> Result<(), Error> {
        if let Some(t) = self.started {
            self.wall_clock_seconds = t.elapsed().as_secs_f64();
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        let tmp = self.file.with_extension("json.tmp");
        fs::write(&tmp, json + "\n").map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &self.file).map_err(|e| Error::io(&self.file, e))
    }

    pub fn path(&self) -> &Path {
        &self.file
    }
}
