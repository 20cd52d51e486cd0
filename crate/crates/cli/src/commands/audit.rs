use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use conformal_reach::perturb::PerturbationManifest;
use conformal_reach::seed::{derive_seed, streams};
use conformal_reach::verify;
use conformal_reach::PerturbationSpec;
use serde::{Deserialize, Serialize};

use super::verify::{decode_intervals, load_image, load_model, INTERVALS_FILE, PERTURBATION_FILE};
use super::{absolute, Command};
use crate::error::{CliError, CliResult};
use crate::manifest::{Outputs, RunContext, RunManifest, RunRecord, Timer, MANIFEST_FILE};

pub const AUDIT_FILE: &str = "audit.json";

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AuditArgs {
    /// Output directory of a finished `verify` run.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to `<run-dir>/audit`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(mut args: AuditArgs, ctx: &RunContext) -> CliResult<()> {
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    args.run_dir = absolute(&args.run_dir)?;
    let out = args.out.clone().unwrap_or_else(|| args.run_dir.join("audit"));
    let mut timer = Timer::start();

    let run = RunManifest::load(&args.run_dir.join(MANIFEST_FILE))?;
    let Command::Verify(verify_args) = &run.args else {
        return Err(CliError::Data(format!(
            "{} holds a `{}` run; audit needs a `verify` run",
            args.run_dir.display(),
            run.command
        )));
    };
    let model = load_model(&verify_args.config.model)?;
    let read = |name: &str| {
        let path = args.run_dir.join(name);
        std::fs::read(&path).map_err(|e| CliError::io(&path, e))
    };
    let perturbation: PerturbationManifest = serde_json::from_slice(&read(PERTURBATION_FILE)?)
        .map_err(|e| CliError::Data(format!("{PERTURBATION_FILE}: {e}")))?;
    let image = load_image(&verify_args.image)?;
    let spec = PerturbationSpec::from_manifest(&perturbation, image)?;
    let (lower, upper) = decode_intervals(&read(INTERVALS_FILE)?)?;
    timer.lap("load");

    let report = verify::conservatism_audit(&model, &spec, &lower, &upper, args.samples, args.seed)?;
    timer.lap("audit");
    println!(
        "eps_hat = {} ({} of {} outside), bound_ratio = {}{}",
        report.eps_hat,
        report.outside_count,
        report.sample_count,
        report.bound_ratio,
        if report.degenerate { " (degenerate certified width)" } else { "" }
    );

    let mut outputs = Outputs::create(&out)?;
    outputs.write_json(AUDIT_FILE, &report)?;
    let record = RunRecord {
        seeds: BTreeMap::from([
            ("root".to_string(), args.seed),
            ("audit".to_string(), derive_seed(args.seed, streams::AUDIT)),
        ]),
        guarantee: run.guarantee,
        timings: timer.finish(),
    };
    record.write(&Command::Audit(args.clone()), ctx, outputs)?;
    Ok(())
}
