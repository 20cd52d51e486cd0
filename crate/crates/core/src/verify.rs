//! Pixel status detection from logit intervals, robustness values, the
//! end-to-end pipelines and the conservatism audit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::{self, CalibrationManifest, HyperRectReachSet, ScoreSource};
use crate::error::{ReachError, Result, StageContext};
use crate::guarantees::{self, GuaranteeSpec};
use crate::hull::{self, IntervalProjection, SurrogateOptions, SurrogateReachSet, SurrogateSizes};
use crate::image_io;
use crate::model::{argmax, predict_mask, ClassMask, LogitTensor, MlpNetwork};
use crate::perturb::PerturbationSpec;
use crate::sampling;
use crate::seed::{derive_seed, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelStatus {
    Robust,
    Nonrobust,
    Unknown,
}

impl PixelStatus {
    /// Gray level in exported masks: white robust, mid-gray nonrobust,
    /// black unknown.
    pub fn gray_level(self) -> u8 {
        match self {
            PixelStatus::Robust => 255,
            PixelStatus::Nonrobust => 128,
            PixelStatus::Unknown => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelStatusMask {
    pub height: usize,
    pub width: usize,
    pub status: Vec<PixelStatus>,
    pub baseline: ClassMask,
    pub rv: f64,
    pub guarantee: Option<GuaranteeSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub robust: usize,
    pub nonrobust: usize,
    pub unknown: usize,
}

impl PixelStatusMask {
    pub fn get(&self, i: usize, j: usize) -> PixelStatus {
        self.status[i * self.width + j]
    }

    pub fn counts(&self) -> StatusCounts {
        let count = |s| self.status.iter().filter(|&&x| x == s).count();
        StatusCounts {
            robust: count(PixelStatus::Robust),
            nonrobust: count(PixelStatus::Nonrobust),
            unknown: count(PixelStatus::Unknown),
        }
    }

    pub fn gray_levels(&self) -> Vec<u8> {
        self.status.iter().map(|s| s.gray_level()).collect()
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        image_io::write_pgm(path, self.width, self.height, &self.gray_levels())
    }
}

/// Per pixel, `l*` maximizes the lower bound (ties to the lowest
/// class); the pixel is unknown when `y_lo(l*) ≤ max_{l≠l*} y_hi(l)`, else
/// robust if `l*` is the baseline class and nonrobust otherwise.
pub fn pixel_status(y_lo: &LogitTensor, y_hi: &LogitTensor, baseline: &ClassMask) -> Result<PixelStatusMask> {
    let shape = (y_lo.height, y_lo.width, y_lo.classes);
    if (y_hi.height, y_hi.width, y_hi.classes) != shape {
        return Err(ReachError::InvalidData("lower and upper bound shapes differ".into()));
    }
    if (baseline.height, baseline.width) != (shape.0, shape.1) {
        return Err(ReachError::InvalidData("baseline mask shape differs from the bounds".into()));
    }
    if y_lo.data.iter().zip(&y_hi.data).any(|(l, h)| !(l <= h)) {
        return Err(ReachError::InvalidData("lower bound exceeds upper bound".into()));
    }
    let mut status = Vec::with_capacity(shape.0 * shape.1);
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            let lo = y_lo.pixel(i, j);
            let hi = y_hi.pixel(i, j);
            let (best, _) = argmax(lo);
            let rival = hi
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != best)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            status.push(if lo[best] <= rival {
                PixelStatus::Unknown
            } else if best == baseline.get(i, j) {
                PixelStatus::Robust
            } else {
                PixelStatus::Nonrobust
            });
        }
    }
    let robust = status.iter().filter(|s| **s == PixelStatus::Robust).count();
    Ok(PixelStatusMask {
        height: shape.0,
        width: shape.1,
        rv: 100.0 * robust as f64 / (shape.0 * shape.1) as f64,
        status,
        baseline: baseline.clone(),
        guarantee: None,
    })
}

/// `100 · N_robust / N_pixels`.
pub fn robustness_value(mask: &PixelStatusMask) -> f64 {
    100.0 * mask.counts().robust as f64 / (mask.height * mask.width) as f64
}

/// Mean of per-image robustness values. No compound guarantee is implied;
/// each image keeps its own.
pub fn average_rv(masks: &[PixelStatusMask]) -> Result<f64> {
    if masks.is_empty() {
        return Err(ReachError::Domain("average RV needs at least one image".into()));
    }
    Ok(masks.iter().map(robustness_value).sum::<f64>() / masks.len() as f64)
}

/// Splits flat per-component bounds into logit tensors shaped like the image.
pub fn bounds_as_logits(height: usize, width: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<(LogitTensor, LogitTensor)> {
    Ok((LogitTensor::from_flat(height, width, lo)?, LogitTensor::from_flat(height, width, hi)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSeeds {
    pub root: u64,
    pub train: u64,
    pub auxiliary: u64,
    pub calibration: u64,
}

impl PipelineSeeds {
    pub fn derive(root: u64) -> Self {
        PipelineSeeds {
            root,
            train: derive_seed(root, streams::TRAIN),
            auxiliary: derive_seed(root, streams::AUXILIARY),
            calibration: derive_seed(root, streams::CALIBRATION),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Naive,
    Surrogate,
}

/// Deterministic record of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub mode: PipelineMode,
    pub seeds: PipelineSeeds,
    pub guarantee: GuaranteeSpec,
    pub train_t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    pub calibration: CalibrationManifest,
    #[serde(default)]
    pub degenerate_hull: bool,
}

/// Baseline mask `f(x)` of the unperturbed image.
pub fn baseline_mask(model: &MlpNetwork, spec: &PerturbationSpec) -> Result<ClassMask> {
    let x = spec.base_image();
    let logits = LogitTensor::from_flat(x.height, x.width, model.infer(x.flatten())?)?;
    Ok(predict_mask(&logits))
}

fn status_from_bounds(
    spec: &PerturbationSpec,
    baseline: &ClassMask,
    lo: Vec<f64>,
    hi: Vec<f64>,
    guarantee: GuaranteeSpec,
) -> Result<PixelStatusMask> {
    let x = spec.base_image();
    let (lo, hi) = bounds_as_logits(x.height, x.width, lo, hi)?;
    let mut mask = pixel_status(&lo, &hi, baseline)?;
    mask.guarantee = Some(guarantee);
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaiveSizes {
    pub train_t: usize,
    pub calib_m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveRun {
    pub reachset: HyperRectReachSet,
    pub mask: PixelStatusMask,
    pub manifest: PipelineManifest,
}

/// Samples the training batch, fits the center and scales, streams the
/// calibration scores, and classifies every pixel.
pub fn run_naive_pipeline(
    model: &MlpNetwork,
    spec: &PerturbationSpec,
    sizes: NaiveSizes,
    epsilon: f64,
    rank_ell: usize,
    seed: u64,
) -> Result<NaiveRun> {
    if sizes.train_t == 0 {
        return Err(ReachError::Domain("training size must be at least 1".into()));
    }
    let guarantee = guarantees::guarantee_confidence(epsilon, rank_ell, sizes.calib_m).stage("guarantee")?;
    let seeds = PipelineSeeds::derive(seed);
    let baseline = baseline_mask(model, spec).stage("baseline")?;
    let train = sampling::sample_outputs(model, spec, seeds.train, sizes.train_t).stage("train")?;
    let cs = calibrate::center_and_scales(&train).stage("train")?;
    drop(train);
    let scores = sampling::map_outputs(model, spec, seeds.calibration, 0..sizes.calib_m as u64, |_, y| {
        cs.score(y)
    })
    .stage("calibration")?;
    let calib = calibrate::CalibrationSet::from_scores(scores, ScoreSource::RawOutputs).stage("calibration")?;
    let reachset = calibrate::naive_reachset(&calib, &cs, guarantee).stage("reachset")?;
    let (lo, hi) = reachset.project_intervals();
    let mask = status_from_bounds(spec, &baseline, lo, hi, guarantee).stage("pixel status")?;
    let manifest = PipelineManifest {
        mode: PipelineMode::Naive,
        seeds,
        guarantee,
        train_t: sizes.train_t,
        aux_t: None,
        components: None,
        calibration: CalibrationManifest::new(&calib, &cs, &guarantee, seeds.calibration, spec.distribution())?,
        degenerate_hull: false,
    };
    Ok(NaiveRun {
        reachset,
        mask,
        manifest,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateRun {
    pub reachset: SurrogateReachSet,
    pub mask: PixelStatusMask,
    pub manifest: PipelineManifest,
}

pub fn run_surrogate_pipeline(
    model: &MlpNetwork,
    spec: &PerturbationSpec,
    sizes: SurrogateSizes,
    epsilon: f64,
    rank_ell: usize,
    seed: u64,
    opts: &SurrogateOptions,
) -> Result<SurrogateRun> {
    let guarantee = guarantees::guarantee_confidence(epsilon, rank_ell, sizes.calib_m).stage("guarantee")?;
    let seeds = PipelineSeeds::derive(seed);
    let baseline = baseline_mask(model, spec).stage("baseline")?;
    let reachset = hull::build_surrogate_reachset(model, spec, sizes, guarantee, opts, seed)?;
    let (lo, hi) = reachset.project_intervals();
    let mask = status_from_bounds(spec, &baseline, lo, hi, guarantee).stage("pixel status")?;
    let calibration = CalibrationManifest {
        m: sizes.calib_m,
        ell: rank_ell,
        epsilon,
        seed: seeds.calibration,
        distribution: spec.distribution(),
        source: ScoreSource::SurrogateErrors,
        score_at_rank: reachset.score_threshold,
        tau_star: reachset.error_scale.tau_star,
        tau_floor_active: reachset.error_scale.floor_active,
    };
    let manifest = PipelineManifest {
        mode: PipelineMode::Surrogate,
        seeds,
        guarantee,
        train_t: sizes.train_t,
        aux_t: Some(sizes.aux_t),
        components: Some(sizes.components),
        calibration,
        degenerate_hull: reachset.surrogate.hull.is_degenerate(),
    };
    Ok(SurrogateRun {
        reachset,
        mask,
        manifest,
    })
}

/// JSON summary of a status mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusSummary {
    pub rv: f64,
    pub counts: StatusCounts,
    pub pixels: usize,
    pub guarantee: Option<GuaranteeSpec>,
    pub seeds: PipelineSeeds,
}

impl StatusSummary {
    pub fn new(mask: &PixelStatusMask, seeds: PipelineSeeds) -> Self {
        StatusSummary {
            rv: mask.rv,
            counts: mask.counts(),
            pixels: mask.height * mask.width,
            guarantee: mask.guarantee,
            seeds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservatismReport {
    pub eps_hat: f64,
    pub outside_count: usize,
    pub sample_count: usize,
    /// Σ empirical widths / Σ certified widths; 0 when `degenerate`.
    pub bound_ratio: f64,
    /// Set when the certified widths sum to zero or to infinity.
    pub degenerate: bool,
    pub empirical_lo: Vec<f64>,
    pub empirical_hi: Vec<f64>,
    pub seed: u64,
}

/// Fraction of fresh samples whose output leaves `[y_lo, y_hi]`, and the
/// ratio of the empirical output extent to the certified one.
pub fn conservatism_audit(
    model: &MlpNetwork,
    spec: &PerturbationSpec,
    y_lo: &[f64],
    y_hi: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<ConservatismReport> {
    if sample_count == 0 {
        return Err(ReachError::Domain("audit needs at least one sample".into()));
    }
    let n = model.output_dim();
    if y_lo.len() != n || y_hi.len() != n {
        return Err(ReachError::dim("audit bounds", n, y_lo.len().min(y_hi.len())));
    }
    let stage_seed = derive_seed(seed, streams::AUDIT);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut outside = 0;
    const BLOCK: u64 = 8192;
    let mut start = 0;
    while start < sample_count as u64 {
        let end = (start + BLOCK).min(sample_count as u64);
        let outputs = sampling::map_outputs(model, spec, stage_seed, start..end, |_, y| Ok(y.to_vec()))?;
        for y in &outputs {
            let mut miss = false;
            for k in 0..n {
                lo[k] = lo[k].min(y[k]);
                hi[k] = hi[k].max(y[k]);
                miss |= !(y_lo[k] <= y[k] && y[k] <= y_hi[k]);
            }
            outside += miss as usize;
        }
        start = end;
    }
    let certified: f64 = y_lo.iter().zip(y_hi).map(|(l, h)| h - l).sum();
    let empirical: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).sum();
    let degenerate = !(certified.is_finite() && certified > 0.0);
    Ok(ConservatismReport {
        eps_hat: outside as f64 / sample_count as f64,
        outside_count: outside,
        sample_count,
        bound_ratio: if degenerate { 0.0 } else { empirical / certified },
        degenerate,
        empirical_lo: lo,
        empirical_hi: hi,
        seed,
    })
}
