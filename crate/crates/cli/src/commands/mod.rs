mod audit;
mod guarantee;
mod replay;
mod sweep;
mod synth;
mod toy;
mod verify;

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, RunContext};

pub use audit::AuditArgs;
pub use guarantee::GuaranteeArgs;
pub use replay::ReplayArgs;
pub use sweep::SweepArgs;
pub use synth::SynthArgs;
pub use toy::ToyArgs;
pub use verify::VerifyArgs;

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Confidence of an ⟨ε, ℓ, m⟩ guarantee.
    Guarantee(GuaranteeArgs),
    /// Pixel-level robustness of one image under an attack.
    Verify(VerifyArgs),
    /// Mean robustness value over images for a list of attack levels.
    Sweep(SweepArgs),
    /// Empirical miscoverage and conservatism of a finished verify run.
    Audit(AuditArgs),
    /// Deep random network with a 2-D output: both reachsets and validation.
    Toy(ToyArgs),
    /// Writes the synthetic 4×4 three-class segmentation model and image.
    Synth(SynthArgs),
    /// Re-runs a manifest and compares output digests.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Guarantee(_) => "guarantee",
            Command::Verify(_) => "verify",
            Command::Sweep(_) => "sweep",
            Command::Audit(_) => "audit",
            Command::Toy(_) => "toy",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Guarantee(a) => a.out = Some(out),
            Command::Verify(a) => a.out = out,
            Command::Sweep(a) => a.out = out,
            Command::Audit(a) => a.out = Some(out),
            Command::Toy(a) => a.out = out,
            Command::Synth(a) => a.out = out,
            Command::Replay(a) => a.out = out,
        }
    }

    /// SHA-256 of the arguments with the output location removed.
    pub fn config_digest(&self) -> CliResult<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        Ok(sha256_hex(serde_json::to_string(&value)?.as_bytes()))
    }

    pub fn run(self, ctx: &RunContext) -> CliResult<()> {
        match self {
            Command::Guarantee(a) => guarantee::run(a, ctx),
            Command::Verify(a) => verify::run(a, ctx),
            Command::Sweep(a) => sweep::run(a, ctx),
            Command::Audit(a) => audit::run(a, ctx),
            Command::Toy(a) => toy::run(a, ctx),
            Command::Synth(a) => synth::run(a, ctx),
            Command::Replay(a) => replay::run(a, ctx),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    Darkening,
    L2,
    Linf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Naive,
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipNormArg {
    Linf,
    L1,
}

impl From<ClipNormArg> for conformal_reach::hull::ClipNorm {
    fn from(n: ClipNormArg) -> Self {
        match n {
            ClipNormArg::Linf => conformal_reach::hull::ClipNorm::LInf,
            ClipNormArg::L1 => conformal_reach::hull::ClipNorm::L1,
        }
    }
}

/// ⟨ε, ℓ, m⟩ flags shared by the commands that calibrate.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GuaranteeFlags {
    /// Calibration set size.
    #[arg(long, default_value_t = 8000)]
    pub m: usize,
    /// Rank of the calibration score used as threshold (1-based).
    #[arg(long, default_value_t = 7999)]
    pub ell: usize,
    /// Miscoverage level.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
}

impl GuaranteeFlags {
    pub fn check(&self) -> CliResult<()> {
        if self.m == 0 {
            return Err(CliError::Usage("--m must be at least 1".into()));
        }
        if self.ell == 0 || self.ell > self.m {
            return Err(CliError::Usage(format!("--ell must lie in 1..={}, got {}", self.m, self.ell)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CliError::Usage(format!("--epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Absolute form of an input path, so manifests replay from any directory.
pub fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| CliError::io(path, e))
}
