use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use conformal_reach::seed::{derive_seed, streams};
use conformal_reach::toy::{self, ToyConfig};
use serde::{Deserialize, Serialize};

use super::{Command, GuaranteeFlags};
use crate::error::{CliError, CliResult};
use crate::manifest::{Outputs, RunContext, RunRecord, Timer};

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 60)]
    pub depth: usize,
    #[arg(long, default_value_t = 100)]
    pub width: usize,
    #[arg(long = "in", visible_alias = "input-dim", default_value_t = 784)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub output_dim: usize,
    #[arg(long, default_value_t = 200_000)]
    pub m: usize,
    #[arg(long, default_value_t = 199_998)]
    pub ell: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Training samples for the naive center and scales.
    #[arg(long, default_value_t = 10_000)]
    pub t: usize,
    /// Leading training samples forming the surrogate basis and hull.
    #[arg(long, default_value_t = 4_000)]
    pub hull_t: usize,
    /// Auxiliary samples for the surrogate error normalization.
    #[arg(long, default_value_t = 10_000)]
    pub tprime: usize,
    #[arg(long = "N", default_value_t = 2)]
    #[serde(rename = "N")]
    pub components: usize,
    /// Fresh samples for the outside fractions.
    #[arg(long, default_value_t = 100_000)]
    pub validation: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl ToyArgs {
    pub fn config(&self) -> CliResult<ToyConfig> {
        GuaranteeFlags {
            m: self.m,
            ell: self.ell,
            epsilon: self.epsilon,
        }
        .check()?;
        if self.depth == 0 || self.width == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(CliError::Usage("network dimensions must be at least 1".into()));
        }
        if self.components == 0 || self.components > self.output_dim {
            return Err(CliError::Usage(format!("--N must lie in 1..={}", self.output_dim)));
        }
        if self.t == 0 || self.hull_t == 0 || self.tprime == 0 || self.validation == 0 {
            return Err(CliError::Usage("sample counts must be at least 1".into()));
        }
        Ok(ToyConfig {
            input_dim: self.input_dim,
            width: self.width,
            depth: self.depth,
            output_dim: self.output_dim,
            calib_m: self.m,
            rank_ell: self.ell,
            epsilon: self.epsilon,
            train_t: self.t,
            hull_t: self.hull_t,
            aux_t: self.tprime,
            components: self.components,
            validation: self.validation,
            seed: self.seed,
        })
    }
}

fn box_outline(csv: &mut String, shape: &str, lo: &[f64], hi: &[f64]) {
    let corners = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1]), (lo[0], lo[1])];
    for (k, (x, y)) in corners.iter().enumerate() {
        let _ = writeln!(csv, "{shape},{k},{x},{y}");
    }
}

pub fn run(args: ToyArgs, ctx: &RunContext) -> CliResult<()> {
    let cfg = args.config()?;
    let mut timer = Timer::start();
    let run = toy::run_toy(&cfg)?;
    timer.lap("pipelines");
    let report = &run.report;

    let mut outputs = Outputs::create(&args.out)?;
    outputs.write_json("report.json", report)?;

    let dims = cfg.output_dim;
    let mut points = (0..dims).map(|k| format!("y{k}")).collect::<Vec<_>>().join(",");
    points.push('\n');
    for y in &run.validation_outputs {
        let row: Vec<String> = y.iter().map(f64::to_string).collect();
        points.push_str(&row.join(","));
        points.push('\n');
    }
    outputs.write("points.csv", points.as_bytes())?;

    if dims == 2 {
        let mut outlines = String::from("shape,vertex,x,y\n");
        box_outline(&mut outlines, "naive", &report.naive.lower, &report.naive.upper);
        box_outline(&mut outlines, "surrogate", &report.surrogate.lower, &report.surrogate.upper);
        let r = &run.surrogate;
        let c = &r.error_scale.center;
        let hull_lo: Vec<f64> = (0..2).map(|k| c[k] + r.lift_lb[k]).collect();
        let hull_hi: Vec<f64> = (0..2).map(|k| c[k] + r.lift_ub[k]).collect();
        box_outline(&mut outlines, "lifted_hull", &hull_lo, &hull_hi);
        outputs.write("outlines.csv", outlines.as_bytes())?;
    }
    timer.lap("write");

    for (name, stats) in [("naive", &report.naive), ("surrogate", &report.surrogate)] {
        println!(
            "{name:<9} width {:.6}  outside {} / {} ({:e})",
            stats.total_width, stats.outside_count, cfg.validation, stats.outside_fraction
        );
    }

    let record = RunRecord {
        seeds: BTreeMap::from([
            ("root".to_string(), cfg.seed),
            ("network".to_string(), derive_seed(cfg.seed, streams::NETWORK)),
            ("train".to_string(), derive_seed(cfg.seed, streams::TRAIN)),
            ("auxiliary".to_string(), derive_seed(cfg.seed, streams::AUXILIARY)),
            ("calibration".to_string(), derive_seed(cfg.seed, streams::CALIBRATION)),
            ("validation".to_string(), derive_seed(cfg.seed, streams::VALIDATION)),
        ]),
        guarantee: Some(report.guarantee),
        timings: timer.finish(),
    };
    record.write(&Command::Toy(args.clone()), ctx, outputs)?;
    Ok(())
}
