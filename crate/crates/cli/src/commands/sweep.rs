use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use conformal_reach::{guarantees, verify};
use serde::{Deserialize, Serialize};

use super::verify::{load_image, load_model, verify_image, VerifyConfig};
use super::{absolute, Command};
use crate::error::{CliError, CliResult};
use crate::manifest::{Outputs, RunContext, RunRecord, Timer};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const RUNTIME_FILE: &str = "sweep_runtime.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Darkening level, or ball radius.
    E,
    /// Attacked pixel fraction.
    Fraction,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Images to verify at every level (repeat or comma-separate).
    #[arg(long = "image", value_delimiter = ',', required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Parameter values (repeat or comma-separate).
    #[arg(long = "value", value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub config: VerifyConfig,
    #[arg(long)]
    pub out: PathBuf,
}

struct Row {
    value: f64,
    completed: usize,
    mean_rv: Option<f64>,
    errors: Vec<String>,
    seconds: f64,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(mut args: SweepArgs, ctx: &RunContext) -> CliResult<()> {
    args.config.check()?;
    if args.images.iter().any(|p| p.as_os_str().is_empty()) || args.images.is_empty() {
        return Err(CliError::Usage("sweep needs at least one image".into()));
    }
    if args.values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    args.config.model = absolute(&args.config.model)?;
    args.images = args.images.iter().map(|p| absolute(p)).collect::<CliResult<_>>()?;
    let mut timer = Timer::start();
    let model = load_model(&args.config.model)?;
    let images = args.images.iter().map(|p| load_image(p)).collect::<CliResult<Vec<_>>>()?;
    timer.lap("load");

    let cfg = &args.config;
    let mut rows = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let start = Instant::now();
        let (e, fraction) = match args.param {
            SweepParam::E => (value, cfg.fraction),
            SweepParam::Fraction => (cfg.e, value),
        };
        let mut masks = Vec::new();
        let mut errors = Vec::new();
        for (path, image) in args.images.iter().zip(&images) {
            match verify_image(cfg, &model, image.clone(), e, fraction) {
                Ok(v) => masks.push(v.mask),
                Err(err) => {
                    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
                    errors.push(format!("{name}: {err}"));
                }
            }
        }
        let mean_rv = if masks.is_empty() { None } else { Some(verify::average_rv(&masks)?) };
        rows.push(Row {
            value,
            completed: masks.len(),
            mean_rv,
            errors,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    timer.lap("sweep");

    let param = match args.param {
        SweepParam::E => "e",
        SweepParam::Fraction => "fraction",
    };
    let mut table = String::from("param,value,images,completed,mean_rv,error\n");
    let mut runtime = String::from("param,value,seconds\n");
    for row in &rows {
        let rv = row.mean_rv.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            table,
            "{param},{},{},{},{rv},{}",
            row.value,
            images.len(),
            row.completed,
            csv_field(&row.errors.join("; "))
        );
        let _ = writeln!(runtime, "{param},{},{}", row.value, row.seconds);
        println!("{param} = {}: mean RV = {rv} ({}/{} images)", row.value, row.completed, images.len());
    }
    let mut outputs = Outputs::create(&args.out)?;
    outputs.write(SWEEP_FILE, table.as_bytes())?;
    outputs.write_untracked(RUNTIME_FILE, runtime.as_bytes())?;
    timer.lap("write");

    let record = RunRecord {
        seeds: cfg.seeds(),
        guarantee: Some(guarantees::guarantee_confidence(
            cfg.guarantee.epsilon,
            cfg.guarantee.ell,
            cfg.guarantee.m,
        )?),
        timings: timer.finish(),
    };
    record.write(&Command::Sweep(args.clone()), ctx, outputs)?;
    Ok(())
}
