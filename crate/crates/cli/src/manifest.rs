use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use scopekit::Error;

pub const FILE_NAME: &str = "manifest.json";

/// Everything except `wall_clock_seconds` is a pure function of the invocation.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    /// Paths relative to the artifact directory, sorted.
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &'static str, config_json: &str, seed: Option<u64>) -> Self {
        Self {
            tool: "scopekit",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: sha256_hex(config_json.as_bytes()),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn write(mut self, dir: &Path, started: Instant) -> Result<(), Error> {
        self.outputs.sort();
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}
