use std::path::PathBuf;

use clap::Args;

use crate::error::{CliError, CliResult};
use crate::manifest::{RunContext, RunManifest, MANIFEST_FILE};

#[derive(Clone, Debug, Args)]
pub struct ReplayArgs {
    /// `manifest.json` of an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the re-run outputs.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: ReplayArgs, ctx: &RunContext) -> CliResult<()> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.args.config_digest()? != recorded.config_digest {
        return Err(CliError::Data(format!(
            "{}: arguments do not match the recorded config digest",
            args.manifest.display()
        )));
    }
    let mut command = recorded.args.clone();
    command.set_out(args.out.clone());
    command.run(ctx)?;

    let replayed = RunManifest::load(&args.out.join(MANIFEST_FILE))?;
    let mut mismatched = Vec::new();
    for (name, digest) in &recorded.outputs {
        match replayed.outputs.get(name) {
            Some(d) if d == digest => {}
            _ => mismatched.push(name.clone()),
        }
    }
    for name in replayed.outputs.keys() {
        if !recorded.outputs.contains_key(name) {
            mismatched.push(name.clone());
        }
    }
    if mismatched.is_empty() {
        println!("replay: {} outputs identical", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Data(format!("replay: outputs differ: {}", mismatched.join(", "))))
    }
}
