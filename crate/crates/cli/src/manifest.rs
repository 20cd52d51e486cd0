//! Run manifests and digested output directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use conformal_reach::GuaranteeSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Command;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to re-execute a run. Timings and the thread count are
/// informational; `outputs` holds the SHA-256 of every primary output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub library_version: String,
    pub command: String,
    pub args: Command,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub guarantee: Option<GuaranteeSpec>,
    pub threads: Option<usize>,
    pub timings: Vec<StageTiming>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Data(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Wall-clock stage timer.
pub struct Timer {
    last: Instant,
    stages: Vec<StageTiming>,
}

impl Timer {
    pub fn start() -> Self {
        Timer {
            last: Instant::now(),
            stages: Vec::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }

    pub fn finish(self) -> Vec<StageTiming> {
        self.stages
    }
}

/// Output directory that remembers the digest of each primary file.
pub struct Outputs {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            digests: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        self.write_untracked(name, bytes)?;
        self.digests.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, &json_bytes(value)?)
    }

    /// Writes a file that is not part of the reproducible output set.
    pub fn write_untracked(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
    }

    /// Digests a file some other writer already produced.
    pub fn track(&mut self, name: &str) -> CliResult<()> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.digests.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.digests
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Context shared by all commands.
pub struct RunContext {
    pub threads: Option<usize>,
}

pub struct RunRecord {
    pub seeds: BTreeMap<String, u64>,
    pub guarantee: Option<GuaranteeSpec>,
    pub timings: Vec<StageTiming>,
}

impl RunRecord {
    /// Writes `manifest.json` next to the outputs.
    pub fn write(self, command: &Command, ctx: &RunContext, outputs: Outputs) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            library_version: conformal_reach::VERSION.to_string(),
            command: command.name().to_string(),
            args: command.clone(),
            config_digest: command.config_digest()?,
            seeds: self.seeds,
            guarantee: self.guarantee,
            threads: ctx.threads,
            timings: self.timings,
            outputs: outputs.digests().clone(),
        };
        outputs.write_untracked(MANIFEST_FILE, &json_bytes(&manifest)?)?;
        Ok(manifest)
    }
}
