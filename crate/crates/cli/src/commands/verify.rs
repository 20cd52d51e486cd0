use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use conformal_reach::hull::{IntervalProjection, SurrogateOptions, SurrogateReachSet, SurrogateSizes};
use conformal_reach::perturb::{self, BallNorm, DARKENING_THRESHOLD};
use conformal_reach::seed::{derive_seed, streams};
use conformal_reach::verify::{
    self, NaiveSizes, PipelineManifest, PipelineSeeds, PixelStatusMask, StatusCounts,
};
use conformal_reach::{image_io, GuaranteeSpec, ImageTensor, MlpNetwork, PerturbationSpec};
use serde::{Deserialize, Serialize};

use super::{absolute, Attack, ClipNormArg, Command, GuaranteeFlags, Mode};
use crate::error::{CliError, CliResult};
use crate::manifest::{Outputs, RunContext, RunRecord, Timer};

pub const INTERVALS_FILE: &str = "intervals.bin";
pub const PERTURBATION_FILE: &str = "perturbation.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STATUS_FILE: &str = "status.pgm";

/// Model, attack and pipeline settings shared by `verify` and `sweep`.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Network file (`MLP v1` format).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Attack::Darkening)]
    pub attack: Attack,
    /// Darkening: minimum intensity drop of an attacked channel.
    /// Balls: radius.
    #[arg(long, default_value_t = 0.1)]
    pub e: f64,
    /// Darkening: fraction of the eligible bright pixels attacked.
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    /// Darkening: channels must all exceed this intensity to be eligible.
    #[arg(long, default_value_t = DARKENING_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = Mode::Naive)]
    pub mode: Mode,
    #[command(flatten)]
    #[serde(flatten)]
    pub guarantee: GuaranteeFlags,
    /// Training samples (center and scales, or basis and hull).
    #[arg(long, default_value_t = 1000)]
    pub t: usize,
    /// Auxiliary samples for the surrogate error normalization.
    #[arg(long, default_value_t = 1000)]
    pub tprime: usize,
    /// Principal components of the surrogate.
    #[arg(long = "N", default_value_t = 2)]
    #[serde(rename = "N")]
    pub components: usize,
    #[arg(long, value_enum, default_value_t = ClipNormArg::Linf)]
    pub clip_norm: ClipNormArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Input image: PGM/PPM, or an `.f64` tensor.
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub config: VerifyConfig,
    #[arg(long)]
    pub out: PathBuf,
}

impl VerifyConfig {
    pub fn check(&self) -> CliResult<()> {
        self.guarantee.check()?;
        if self.t == 0 {
            return Err(CliError::Usage("--t must be at least 1".into()));
        }
        if self.mode == Mode::Surrogate && (self.tprime == 0 || self.components == 0) {
            return Err(CliError::Usage("--tprime and --N must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let s = PipelineSeeds::derive(self.seed);
        BTreeMap::from([
            ("root".to_string(), s.root),
            ("train".to_string(), s.train),
            ("auxiliary".to_string(), s.auxiliary),
            ("calibration".to_string(), s.calibration),
            ("pixel_selection".to_string(), derive_seed(self.seed, streams::PIXEL_SELECTION)),
        ])
    }

    pub fn perturbation(&self, image: ImageTensor, e: f64, fraction: f64) -> CliResult<PerturbationSpec> {
        Ok(match self.attack {
            Attack::Darkening => perturb::build_darkening(image, fraction, self.threshold, e, self.seed)?,
            Attack::L2 => perturb::build_global_ball(image, BallNorm::L2, e)?,
            Attack::Linf => perturb::build_global_ball(image, BallNorm::Linf, e)?,
        })
    }
}

pub struct Verified {
    pub spec: PerturbationSpec,
    pub mask: PixelStatusMask,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pipeline: PipelineManifest,
    pub surrogate: Option<SurrogateReachSet>,
}

pub fn load_model(path: &Path) -> CliResult<MlpNetwork> {
    Ok(MlpNetwork::load(path)?)
}

pub fn load_image(path: &Path) -> CliResult<ImageTensor> {
    Ok(image_io::read_image(path)?)
}

pub fn check_shapes(model: &MlpNetwork, image: &ImageTensor) -> CliResult<()> {
    if model.input_dim() != image.len() {
        return Err(CliError::Data(format!(
            "model expects {} inputs but the image has {}",
            model.input_dim(),
            image.len()
        )));
    }
    let pixels = image.height * image.width;
    if model.output_dim() % pixels != 0 {
        return Err(CliError::Data(format!(
            "model output {} is not a multiple of the {pixels} image pixels",
            model.output_dim()
        )));
    }
    Ok(())
}

/// One full verification of `image` at attack level `(e, fraction)`.
pub fn verify_image(
    cfg: &VerifyConfig,
    model: &MlpNetwork,
    image: ImageTensor,
    e: f64,
    fraction: f64,
) -> CliResult<Verified> {
    check_shapes(model, &image)?;
    let spec = cfg.perturbation(image, e, fraction)?;
    let g = &cfg.guarantee;
    match cfg.mode {
        Mode::Naive => {
            let sizes = NaiveSizes {
                train_t: cfg.t,
                calib_m: g.m,
            };
            let run = verify::run_naive_pipeline(model, &spec, sizes, g.epsilon, g.ell, cfg.seed)?;
            let (lower, upper) = run.reachset.project_intervals();
            Ok(Verified {
                spec,
                mask: run.mask,
                lower,
                upper,
                pipeline: run.manifest,
                surrogate: None,
            })
        }
        Mode::Surrogate => {
            let sizes = SurrogateSizes {
                train_t: cfg.t,
                aux_t: cfg.tprime,
                calib_m: g.m,
                components: cfg.components,
            };
            let opts = SurrogateOptions {
                norm: cfg.clip_norm.into(),
                ..SurrogateOptions::default()
            };
            let run = verify::run_surrogate_pipeline(model, &spec, sizes, g.epsilon, g.ell, cfg.seed, &opts)?;
            let (lower, upper) = run.reachset.project_intervals();
            Ok(Verified {
                spec,
                mask: run.mask,
                lower,
                upper,
                pipeline: run.manifest,
                surrogate: Some(run.reachset),
            })
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifySummary {
    pub mode: Mode,
    pub rv: f64,
    pub counts: StatusCounts,
    pub pixels: usize,
    pub baseline: Vec<usize>,
    pub guarantee: Option<GuaranteeSpec>,
    pub pipeline: PipelineManifest,
}

/// `INTERVALS v1 <n>` header line, then the lower and the upper bounds as
/// little-endian f64.
pub fn encode_intervals(lower: &[f64], upper: &[f64]) -> Vec<u8> {
    let mut out = format!("INTERVALS v1 {}\n", lower.len()).into_bytes();
    for v in lower.iter().chain(upper) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_intervals(bytes: &[u8]) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let bad = |what: &str| CliError::Data(format!("{INTERVALS_FILE}: {what}"));
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| bad("header is not UTF-8"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let n: usize = match tokens.as_slice() {
        ["INTERVALS", "v1", n] => n.parse().map_err(|_| bad("bad length"))?,
        _ => return Err(bad("expected `INTERVALS v1 <n>`")),
    };
    let payload = &bytes[newline + 1..];
    if payload.len() != 16 * n {
        return Err(bad("payload length does not match the header"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((values[..n].to_vec(), values[n..].to_vec()))
}

pub fn run(mut args: VerifyArgs, ctx: &RunContext) -> CliResult<()> {
    args.config.check()?;
    args.image = absolute(&args.image)?;
    args.config.model = absolute(&args.config.model)?;
    let mut timer = Timer::start();
    let model = load_model(&args.config.model)?;
    let image = load_image(&args.image)?;
    timer.lap("load");
    let cfg = &args.config;
    let v = verify_image(cfg, &model, image, cfg.e, cfg.fraction)?;
    timer.lap("pipeline");

    let mut outputs = Outputs::create(&args.out)?;
    v.mask.write_pgm(&outputs.path(STATUS_FILE))?;
    outputs.track(STATUS_FILE)?;
    let summary = VerifySummary {
        mode: cfg.mode,
        rv: v.mask.rv,
        counts: v.mask.counts(),
        pixels: v.mask.height * v.mask.width,
        baseline: v.mask.baseline.classes.clone(),
        guarantee: v.mask.guarantee,
        pipeline: v.pipeline.clone(),
    };
    outputs.write_json(SUMMARY_FILE, &summary)?;
    outputs.write(INTERVALS_FILE, &encode_intervals(&v.lower, &v.upper))?;
    outputs.write_json(
        PERTURBATION_FILE,
        &v.spec.manifest(Some(args.image.display().to_string())),
    )?;
    if let Some(reachset) = &v.surrogate {
        let dir = outputs.path("surrogate");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        reachset.save(&dir, cfg.seed)?;
        for name in ["basis.pca", "hull.bin", "surrogate.json"] {
            outputs.track(&format!("surrogate/{name}"))?;
        }
    }
    timer.lap("write");
    println!("RV = {}", v.mask.rv);

    let record = RunRecord {
        seeds: cfg.seeds(),
        guarantee: v.mask.guarantee,
        timings: timer.finish(),
    };
    record.write(&Command::Verify(args.clone()), ctx, outputs)?;
    Ok(())
}
