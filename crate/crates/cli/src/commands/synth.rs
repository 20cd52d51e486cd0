use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use conformal_reach::{image_io, toy};
use serde::{Deserialize, Serialize};

use super::Command;
use crate::error::CliResult;
use crate::manifest::{Outputs, RunContext, RunRecord, Timer};

pub const MODEL_FILE: &str = "model.mlp";
pub const IMAGE_FILE: &str = "image.f64";

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: SynthArgs, ctx: &RunContext) -> CliResult<()> {
    let mut timer = Timer::start();
    let (model, image) = toy::synthetic_segmentation()?;
    let mut outputs = Outputs::create(&args.out)?;
    model.save(&outputs.path(MODEL_FILE))?;
    outputs.track(MODEL_FILE)?;
    image_io::write_f64_tensor(&outputs.path(IMAGE_FILE), &image)?;
    outputs.track(IMAGE_FILE)?;
    timer.lap("write");
    println!("{}", outputs.path(MODEL_FILE).display());
    println!("{}", outputs.path(IMAGE_FILE).display());
    let record = RunRecord {
        seeds: BTreeMap::new(),
        guarantee: None,
        timings: timer.finish(),
    };
    record.write(&Command::Synth(args.clone()), ctx, outputs)?;
    Ok(())
}
