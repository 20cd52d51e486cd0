//! Deep random ReLU network on the unit cube with a low-dimensional output:
//! builds the naive and the surrogate reachset from shared sample batches and
//! validates both on fresh samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{self, ScoreSource};
use crate::error::{ReachError, Result, StageContext};
use crate::guarantees::{self, GuaranteeSpec};
use crate::hull::{self, IntervalProjection, SurrogateOptions, SurrogateReachSet};
use crate::model::{ImageTensor, MlpNetwork};
use crate::perturb::{build_global_ball, BallNorm, PerturbationSpec};
use crate::sampling;
use crate::seed::{derive_seed, streams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub calib_m: usize,
    pub rank_ell: usize,
    pub epsilon: f64,
    /// Training samples for the naive center and scales.
    pub train_t: usize,
    /// Leading training samples that form the hull.
    pub hull_t: usize,
    pub aux_t: usize,
    pub components: usize,
    pub validation: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            input_dim: 784,
            width: 100,
            depth: 60,
            output_dim: 2,
            calib_m: 200_000,
            rank_ell: 199_998,
            epsilon: 1e-4,
            train_t: 10_000,
            hull_t: 4_000,
            aux_t: 10_000,
            components: 2,
            validation: 100_000,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat(self.width).take(self.depth));
        dims.push(self.output_dim);
        dims
    }

    /// Uniform distribution on `[0, 1]^input_dim`.
    pub fn input_set(&self) -> Result<PerturbationSpec> {
        build_global_ball(ImageTensor::filled(1, self.input_dim, 1, 0.5), BallNorm::Linf, 0.5)
    }

    pub fn network(&self) -> Result<MlpNetwork> {
        MlpNetwork::random(&self.layer_dims(), derive_seed(self.seed, streams::NETWORK))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub total_width: f64,
    pub outside_count: usize,
    pub outside_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub config: ToyConfig,
    pub guarantee: GuaranteeSpec,
    pub naive: BoxStats,
    pub surrogate: BoxStats,
    pub degenerate_hull: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyRun {
    pub report: ToyReport,
    pub surrogate: SurrogateReachSet,
    pub validation_outputs: Vec<Vec<f64>>,
}

fn box_stats(lower: Vec<f64>, upper: Vec<f64>, validation: &[Vec<f64>]) -> BoxStats {
    let outside = validation
        .par_iter()
        .filter(|y| y.iter().enumerate().any(|(k, v)| !(lower[k] <= *v && *v <= upper[k])))
        .count();
    BoxStats {
        total_width: lower.iter().zip(&upper).map(|(l, h)| h - l).sum(),
        outside_fraction: outside as f64 / validation.len().max(1) as f64,
        outside_count: outside,
        lower,
        upper,
    }
}

pub fn run_toy(cfg: &ToyConfig) -> Result<ToyRun> {
    if cfg.hull_t == 0 || cfg.train_t == 0 || cfg.aux_t == 0 || cfg.validation == 0 {
        return Err(ReachError::Domain("toy sample sizes must be at least 1".into()));
    }
    let guarantee = guarantees::guarantee_confidence(cfg.epsilon, cfg.rank_ell, cfg.calib_m).stage("guarantee")?;
    let model = cfg.network().stage("network")?;
    let inputs = cfg.input_set()?;
    let draw = |stream, count: usize| sampling::sample_outputs(&model, &inputs, derive_seed(cfg.seed, stream), count);

    let train = draw(streams::TRAIN, cfg.train_t.max(cfg.hull_t)).stage("train")?;
    let aux = draw(streams::AUXILIARY, cfg.aux_t).stage("auxiliary")?;
    let calib = draw(streams::CALIBRATION, cfg.calib_m).stage("calibration")?;
    let validation = draw(streams::VALIDATION, cfg.validation).stage("validation")?;

    let cs = calibrate::center_and_scales(&train[..cfg.train_t]).stage("train")?;
    let calib_set = calibrate::build_calibration(&calib, &cs, ScoreSource::RawOutputs).stage("calibration")?;
    let naive = calibrate::naive_reachset(&calib_set, &cs, guarantee).stage("reachset")?;

    let opts = SurrogateOptions::default();
    let surrogate = hull::surrogate_reachset_from_outputs(
        &train[..cfg.hull_t],
        &aux,
        &calib,
        cfg.components,
        guarantee,
        &opts,
    )?;

    let (nlo, nhi) = naive.project_intervals();
    let (slo, shi) = surrogate.project_intervals();
    let report = ToyReport {
        config: *cfg,
        guarantee,
        naive: box_stats(nlo, nhi, &validation),
        surrogate: box_stats(slo, shi, &validation),
        degenerate_hull: surrogate.surrogate.hull.is_degenerate(),
    };
    Ok(ToyRun {
        report,
        surrogate,
        validation_outputs: validation,
    })
}

/// Logit rule of one pixel of [`synthetic_segmentation`]: per class, a bias
/// and the weights on the two bright pixels.
type PixelRule = [(f64, f64, f64); 3];

const SYNTHETIC_RULES: [PixelRule; 16] = [
    [(1.0, 1.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)],
    [(1.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)],
    [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0)],
    [(0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0)],
    [(0.5, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 0.0, 0.0)],
    [(0.0, 0.0, 0.0), (0.2, 0.0, 0.0), (1.5, 0.0, 0.0)],
    [(2.0, 0.2, 0.0), (0.0, 0.0, 0.3), (0.0, 0.0, 0.3)],
    [(0.0, 0.0, 0.3), (0.0, 0.3, 0.0), (2.0, 0.0, 0.2)],
    [(1.0, 0.0, 0.0), (0.0, 2.0, 0.0), (0.0, 0.0, 0.0)],
    [(0.5, 0.0, 0.0), (0.0, 2.0, 0.0), (0.0, 0.0, 2.0)],
    [(1.2, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 3.0)],
    [(0.0, 2.0, 2.0), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0)],
    [(0.5, -1.0, 0.0), (0.0, 0.0, 0.0), (-5.0, 0.0, 0.0)],
    [(0.5, 0.0, 0.1), (1.0, 0.1, 0.0), (0.0, 0.0, 0.0)],
    [(1.2, 0.0, 0.0), (0.0, 0.0, 0.0), (4.6, -4.0, 0.0)],
    [(0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 0.0, 1.0)],
];

/// A 4×4 single-channel image with two bright pixels, `(0, 0)` and `(3, 3)`,
/// and a 16 → 16 → 48 network producing 3 class logits per pixel. The hidden
/// layer is the identity (inputs are non-negative), and every logit is affine
/// in the two bright intensities, so a darkening attack on them has a
/// two-dimensional λ. Some pixels are stable, some flip inside the attack box
/// and one flips everywhere.
pub fn synthetic_segmentation() -> Result<(MlpNetwork, ImageTensor)> {
    let mut pixels = vec![0.2; 16];
    pixels[0] = 0.9;
    pixels[15] = 0.8;
    let image = ImageTensor::new(4, 4, 1, pixels)?;
    let mut hidden = vec![0.0; 16 * 16];
    for i in 0..16 {
        hidden[i * 16 + i] = 1.0;
    }
    let mut out = vec![0.0; 48 * 16];
    let mut bias = vec![0.0; 48];
    for (p, rule) in SYNTHETIC_RULES.iter().enumerate() {
        for (l, &(b, wa, wb)) in rule.iter().enumerate() {
            let row = 3 * p + l;
            bias[row] = b;
            out[row * 16] = wa;
            out[row * 16 + 15] = wb;
        }
    }
    let model = MlpNetwork::new(vec![16, 16, 48], vec![hidden, out], vec![vec![0.0; 16], bias])?;
    Ok((model, image))
}
