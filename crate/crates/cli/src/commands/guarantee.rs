use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use conformal_reach::guarantees::{self, GuaranteeSpec};
use serde::{Deserialize, Serialize};

use super::{Command, GuaranteeFlags};
use crate::error::CliResult;
use crate::manifest::{Outputs, RunContext, RunRecord, Timer};

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GuaranteeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub flags: GuaranteeFlags,
    /// Also write guarantee.json and a manifest to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GuaranteeReport {
    #[serde(flatten)]
    spec: GuaranteeSpec,
    beta_mean: f64,
    beta_variance: f64,
}

pub fn run(args: GuaranteeArgs, ctx: &RunContext) -> CliResult<()> {
    args.flags.check()?;
    let mut timer = Timer::start();
    let f = &args.flags;
    let spec = guarantees::guarantee_confidence(f.epsilon, f.ell, f.m)?;
    let (mean, variance) = guarantees::beta_moments(f.ell, f.m)?;
    timer.lap("guarantee");
    println!("epsilon        {}", spec.epsilon);
    println!("ell            {}", spec.rank_ell);
    println!("m              {}", spec.calib_size_m);
    println!("delta1         {}", spec.coverage_delta1);
    println!("delta2         {:.10}", spec.confidence_delta2);
    println!("1 - delta2     {:.6e}", spec.confidence_shortfall);
    println!("beta mean      {mean:.10}");
    println!("beta variance  {variance:.6e}");

    if let Some(dir) = &args.out {
        let mut outputs = Outputs::create(dir)?;
        outputs.write_json(
            "guarantee.json",
            &GuaranteeReport {
                spec,
                beta_mean: mean,
                beta_variance: variance,
            },
        )?;
        let record = RunRecord {
            seeds: BTreeMap::new(),
            guarantee: Some(spec),
            timings: timer.finish(),
        };
        record.write(&Command::Guarantee(args.clone()), ctx, outputs)?;
    }
    Ok(())
}
