//! Convex hull of reduced training outputs, LP clipping onto it, the
//! surrogate `g(x) = A · clip(Aᵀ f(x))`, and the surrogate reachset: the
//! lifted hull Minkowski-added to a conformal box around the error
//! `q = f − g`, consumed through its per-component interval projection.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    self, CalibrationSet, CenterScale, HyperRectReachSet, ScoreSource,
};
use crate::container::{self, Payload};
use crate::error::{ReachError, Result, StageContext};
use crate::guarantees::GuaranteeSpec;
use crate::lp::LinearProgram;
use crate::model::MlpNetwork;
use crate::pca::{self, DeflationOptions, ProjectionBasis};
use crate::perturb::PerturbationSpec;
use crate::sampling;
use crate::seed::{derive_seed, streams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipNorm {
    #[default]
    LInf,
    L1,
}

/// Result of projecting a reduced vector onto the hull.
#[derive(Clone, Debug, PartialEq)]
pub struct Clipped {
    pub projected: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Attained distance `‖v − projected‖` in the clipping norm.
    pub residual: f64,
}

/// Reduced training outputs `v_j = Aᵀ y_j` and the basis they live in.
#[derive(Clone, Debug, PartialEq)]
pub struct HullModel {
    pub basis: ProjectionBasis,
    points: Vec<Vec<f64>>,
}

impl HullModel {
    pub fn new(basis: ProjectionBasis, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(ReachError::Domain("hull needs at least one point".into()));
        }
        let rank = basis.rank();
        for p in &points {
            if p.len() != rank {
                return Err(ReachError::dim("hull point", rank, p.len()));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(ReachError::InvalidData("non-finite hull point".into()));
            }
        }
        Ok(HullModel { basis, points })
    }

    /// Reduces `outputs` through `basis` and keeps every reduced point.
    pub fn from_outputs<T: AsRef<[f64]> + Sync>(basis: ProjectionBasis, outputs: &[T]) -> Result<Self> {
        let points = outputs
            .par_iter()
            .map(|y| basis.reduce(y.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(basis, points)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Fewer than `N + 1` points cannot span a full-dimensional hull.
    pub fn is_degenerate(&self) -> bool {
        self.points.len() < self.basis.rank() + 1
    }

    /// Componentwise extrema of the lifted points `A v_j`.
    pub fn lifted_bounds(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.basis.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in &self.points {
            let y = self.basis.lift(p)?;
            for k in 0..n {
                lo[k] = lo[k].min(y[k]);
                hi[k] = hi[k].max(y[k]);
            }
        }
        Ok((lo, hi))
    }

    pub fn clip(&self, v: &[f64], norm: ClipNorm) -> Result<Clipped> {
        clip(v, self, norm)
    }

    pub fn write_points<W: Write>(&self, w: &mut W) -> Result<()> {
        container::write_header(
            w,
            &[
                "HULL".into(),
                "v1".into(),
                self.points.len().to_string(),
                self.basis.rank().to_string(),
            ],
        )?;
        for p in &self.points {
            container::write_f64s(w, p)?;
        }
        Ok(())
    }

    pub fn read_points(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
        let (tokens, payload) = container::split_header(bytes)?;
        container::expect_magic(&tokens, "HULL", "v1")?;
        if tokens.len() != 4 {
            return Err(ReachError::MalformedHeader("expected `HULL v1 <t> <N>`".into()));
        }
        let t = container::parse_usize(&tokens[2], "point count")?;
        let rank = container::parse_usize(&tokens[3], "rank")?;
        let mut payload = Payload::new(payload);
        let points = (0..t)
            .map(|_| payload.take(rank, "hull point"))
            .collect::<Result<Vec<_>>>()?;
        payload.finish()?;
        Ok(points)
    }
}

/// Projects `v` onto the convex hull of the hull points by solving
/// `min ‖v − Σ α_j v_j‖` over the simplex `α ≥ 0, Σ α = 1` as an LP with
/// epigraph variables (one for ℓ∞, one per component for ℓ1).
pub fn clip(v: &[f64], hull: &HullModel, norm: ClipNorm) -> Result<Clipped> {
    let big_n = hull.basis.rank();
    if v.len() != big_n {
        return Err(ReachError::dim("clip input", big_n, v.len()));
    }
    let t = hull.points.len();
    let epi = match norm {
        ClipNorm::LInf => 1,
        ClipNorm::L1 => big_n,
    };
    let vars = t + epi;
    let mut objective = vec![0.0; vars];
    objective[t..].fill(1.0);
    let mut lp = LinearProgram::new(objective);
    let mut simplex = vec![1.0; vars];
    simplex[t..].fill(0.0);
    lp.equal(simplex, 1.0);
    for k in 0..big_n {
        let s = t + if epi == 1 { 0 } else { k };
        let mut above: Vec<f64> = hull.points.iter().map(|p| p[k]).collect();
        above.resize(vars, 0.0);
        above[s] = -1.0;
        let mut below: Vec<f64> = above.iter().map(|a| -a).collect();
        below[s] = -1.0;
        lp.at_most(above, v[k]);
        lp.at_most(below, -v[k]);
    }
    let sol = lp.solve()?;
    let mut alpha: Vec<f64> = sol.x[..t].iter().map(|a| a.max(0.0)).collect();
    let total: f64 = alpha.iter().sum();
    if !(total > 0.0) {
        return Err(ReachError::Numerical("clip produced an empty combination".into()));
    }
    alpha.iter_mut().for_each(|a| *a /= total);
    let mut projected = vec![0.0; big_n];
    for (a, p) in alpha.iter().zip(&hull.points) {
        if *a != 0.0 {
            for (o, x) in projected.iter_mut().zip(p) {
                *o += a * x;
            }
        }
    }
    let diffs = v.iter().zip(&projected).map(|(a, b)| (a - b).abs());
    let residual = match norm {
        ClipNorm::LInf => diffs.fold(0.0, f64::max),
        ClipNorm::L1 => diffs.sum(),
    };
    Ok(Clipped {
        projected,
        alpha,
        residual,
    })
}

/// Clipped surrogate of the network output.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub hull: HullModel,
    pub norm: ClipNorm,
}

impl Surrogate {
    /// `A · clip(Aᵀ y)` for a network output `y`.
    pub fn predict_from_output(&self, y: &[f64]) -> Result<Vec<f64>> {
        let v = self.hull.basis.reduce(y)?;
        let clipped = self.hull.clip(&v, self.norm)?;
        self.hull.basis.lift(&clipped.projected)
    }

    /// Surrogate error `q = y − g` for a network output `y`.
    pub fn error_from_output(&self, y: &[f64]) -> Result<Vec<f64>> {
        let g = self.predict_from_output(y)?;
        Ok(y.iter().zip(&g).map(|(a, b)| a - b).collect())
    }
}

pub fn surrogate_predict(model: &MlpNetwork, surrogate: &Surrogate, x_flat: &[f64]) -> Result<Vec<f64>> {
    surrogate.predict_from_output(&model.infer(x_flat)?)
}

/// Per-component bounds `[y_lo(k), y_hi(k)]` of a reachset.
pub trait IntervalProjection {
    fn project_intervals(&self) -> (Vec<f64>, Vec<f64>);

    fn total_width(&self) -> f64 {
        let (lo, hi) = self.project_intervals();
        lo.iter().zip(&hi).map(|(l, h)| h - l).sum()
    }
}

impl IntervalProjection for HyperRectReachSet {
    fn project_intervals(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower(), self.upper())
    }
}

/// Lifted hull `⊕` conformal error box.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateReachSet {
    pub surrogate: Surrogate,
    pub error_scale: CenterScale,
    pub error_sigma: Vec<f64>,
    pub score_threshold: f64,
    pub lift_lb: Vec<f64>,
    pub lift_ub: Vec<f64>,
    pub guarantee: GuaranteeSpec,
}

impl IntervalProjection for SurrogateReachSet {
    fn project_intervals(&self) -> (Vec<f64>, Vec<f64>) {
        let c = &self.error_scale.center;
        let lo = (0..c.len())
            .map(|k| c[k] + self.lift_lb[k] - self.error_sigma[k])
            .collect();
        let hi = (0..c.len())
            .map(|k| c[k] + self.lift_ub[k] + self.error_sigma[k])
            .collect();
        (lo, hi)
    }
}

pub fn project_intervals<R: IntervalProjection>(reachset: &R) -> (Vec<f64>, Vec<f64>) {
    reachset.project_intervals()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSizes {
    /// Training samples for the basis and the hull.
    pub train_t: usize,
    /// Auxiliary samples for the error normalization.
    pub aux_t: usize,
    pub calib_m: usize,
    pub components: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOptions {
    pub norm: ClipNorm,
    pub deflation: DeflationOptions,
}

/// Basis and hull from training outputs (stages "pca" and "hull").
pub fn fit_surrogate<T: AsRef<[f64]> + Sync>(
    train_outputs: &[T],
    components: usize,
    opts: &SurrogateOptions,
) -> Result<Surrogate> {
    let basis = pca::deflate(train_outputs, components, &opts.deflation).stage("pca")?;
    let hull = HullModel::from_outputs(basis, train_outputs).stage("hull")?;
    Ok(Surrogate {
        hull,
        norm: opts.norm,
    })
}

/// Assembles the reachset once the surrogate, the error normalization and the
/// calibration scores of the error are known.
pub fn assemble_surrogate_reachset(
    surrogate: Surrogate,
    error_scale: CenterScale,
    calib: &CalibrationSet,
    guarantee: GuaranteeSpec,
) -> Result<SurrogateReachSet> {
    let boxed = calibrate::naive_reachset(calib, &error_scale, guarantee)?;
    let (lift_lb, lift_ub) = surrogate.hull.lifted_bounds()?;
    Ok(SurrogateReachSet {
        surrogate,
        error_scale,
        error_sigma: boxed.sigma,
        score_threshold: boxed.score_threshold,
        lift_lb,
        lift_ub,
        guarantee,
    })
}

/// Builds the reachset from precomputed network outputs of the training,
/// auxiliary and calibration batches.
pub fn surrogate_reachset_from_outputs<T: AsRef<[f64]> + Sync>(
    train_outputs: &[T],
    aux_outputs: &[T],
    calib_outputs: &[T],
    components: usize,
    guarantee: GuaranteeSpec,
    opts: &SurrogateOptions,
) -> Result<SurrogateReachSet> {
    let surrogate = fit_surrogate(train_outputs, components, opts)?;
    let errors = aux_outputs
        .par_iter()
        .map(|y| surrogate.error_from_output(y.as_ref()))
        .collect::<Result<Vec<_>>>()
        .stage("auxiliary")?;
    let error_scale = calibrate::center_and_scales(&errors).stage("auxiliary")?;
    let scores = calib_outputs
        .par_iter()
        .map(|y| {
            let q = surrogate.error_from_output(y.as_ref())?;
            error_scale.score(&q)
        })
        .collect::<Result<Vec<_>>>()
        .stage("calibration")?;
    let calib = CalibrationSet::from_scores(scores, ScoreSource::SurrogateErrors).stage("calibration")?;
    assemble_surrogate_reachset(surrogate, error_scale, &calib, guarantee).stage("assemble")
}

/// Full sampling pipeline: training batch on stream `TRAIN`, auxiliary batch
/// on `AUXILIARY`, calibration batch on `CALIBRATION`, all derived from
/// `seed`.
pub fn build_surrogate_reachset(
    model: &MlpNetwork,
    spec: &PerturbationSpec,
    sizes: SurrogateSizes,
    guarantee: GuaranteeSpec,
    opts: &SurrogateOptions,
    seed: u64,
) -> Result<SurrogateReachSet> {
    if sizes.train_t == 0 || sizes.aux_t == 0 || sizes.calib_m == 0 {
        return Err(ReachError::Domain("sample sizes must be at least 1".into()));
    }
    if guarantee.calib_size_m != sizes.calib_m {
        return Err(ReachError::InvalidData(format!(
            "guarantee assumes m = {}, pipeline draws {}",
            guarantee.calib_size_m, sizes.calib_m
        )));
    }
    let train = sampling::sample_outputs(model, spec, derive_seed(seed, streams::TRAIN), sizes.train_t)
        .stage("train")?;
    let surrogate = fit_surrogate(&train, sizes.components, opts)?;
    drop(train);

    let errors = sampling::map_outputs(
        model,
        spec,
        derive_seed(seed, streams::AUXILIARY),
        0..sizes.aux_t as u64,
        |_, y| surrogate.error_from_output(y),
    )
    .stage("auxiliary")?;
    let error_scale = calibrate::center_and_scales(&errors).stage("auxiliary")?;
    drop(errors);

    let scores = sampling::map_outputs(
        model,
        spec,
        derive_seed(seed, streams::CALIBRATION),
        0..sizes.calib_m as u64,
        |_, y| error_scale.score(&surrogate.error_from_output(y)?),
    )
    .stage("calibration")?;
    let calib = CalibrationSet::from_scores(scores, ScoreSource::SurrogateErrors).stage("calibration")?;
    assemble_surrogate_reachset(surrogate, error_scale, &calib, guarantee).stage("assemble")
}

/// JSON sidecar of a persisted surrogate reachset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSidecar {
    pub norm: ClipNorm,
    pub error_scale: CenterScale,
    pub error_sigma: Vec<f64>,
    pub score_threshold: f64,
    pub lift_lb: Vec<f64>,
    pub lift_ub: Vec<f64>,
    pub guarantee: GuaranteeSpec,
    pub seed: u64,
}

pub const BASIS_FILE: &str = "basis.pca";
pub const HULL_FILE: &str = "hull.bin";
pub const SIDECAR_FILE: &str = "surrogate.json";

impl SurrogateReachSet {
    /// Writes the basis, the hull points and the JSON sidecar into `dir`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        self.surrogate.hull.basis.save(&dir.join(BASIS_FILE))?;
        let mut bytes = Vec::new();
        self.surrogate.hull.write_points(&mut bytes)?;
        std::fs::write(dir.join(HULL_FILE), bytes)?;
        let sidecar = SurrogateSidecar {
            norm: self.surrogate.norm,
            error_scale: self.error_scale.clone(),
            error_sigma: self.error_sigma.clone(),
            score_threshold: self.score_threshold,
            lift_lb: self.lift_lb.clone(),
            lift_ub: self.lift_ub.clone(),
            guarantee: self.guarantee,
            seed,
        };
        std::fs::write(dir.join(SIDECAR_FILE), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Reads a reachset written by [`SurrogateReachSet::save`]; returns it with
    /// the recorded seed.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let basis = ProjectionBasis::load(&dir.join(BASIS_FILE))?;
        let points = HullModel::read_points(&container::read_file(&dir.join(HULL_FILE))?)?;
        let hull = HullModel::new(basis, points)?;
        let sidecar: SurrogateSidecar =
            serde_json::from_slice(&container::read_file(&dir.join(SIDECAR_FILE))?)?;
        let n = hull.basis.dim();
        for (what, v) in [
            ("error center", &sidecar.error_scale.center),
            ("error sigma", &sidecar.error_sigma),
            ("lift lower bound", &sidecar.lift_lb),
            ("lift upper bound", &sidecar.lift_ub),
        ] {
            if v.len() != n {
                return Err(ReachError::dim(what, n, v.len()));
            }
        }
        Ok((
            SurrogateReachSet {
                surrogate: Surrogate {
                    hull,
                    norm: sidecar.norm,
                },
                error_scale: sidecar.error_scale,
                error_sigma: sidecar.error_sigma,
                score_threshold: sidecar.score_threshold,
                lift_lb: sidecar.lift_lb,
                lift_ub: sidecar.lift_ub,
                guarantee: sidecar.guarantee,
            },
            sidecar.seed,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantees::guarantee_confidence;
    use crate::model::ImageTensor;
    use crate::perturb::{build_global_ball, BallNorm};
    use crate::seed::sample_rng;
    use rand::Rng;

    fn identity_basis(n: usize) -> ProjectionBasis {
        ProjectionBasis::from_columns(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
        .unwrap()
    }

    fn hull2(points: Vec<Vec<f64>>) -> HullModel {
        HullModel::new(identity_basis(2), points).unwrap()
    }

    #[test]
    fn member_point_is_fixed() {
        let h = hull2(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = h.clip(&[1.0, 0.0], ClipNorm::LInf).unwrap();
        assert!(c.residual <= 1e-7);
        assert!((c.projected[0] - 1.0).abs() <= 1e-12 && c.projected[1].abs() <= 1e-12);
    }

    #[test]
    fn segment_example() {
        let h = hull2(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let c = h.clip(&[0.5, 1.0], ClipNorm::LInf).unwrap();
        assert!((c.residual - 1.0).abs() < 1e-12);
        assert!(c.projected[1].abs() < 1e-12);
        // Any x in [0, 1] attains the l∞ optimum; a dense scan over α agrees.
        let best = (0..=1000)
            .map(|i| {
                let a = i as f64 / 1000.0;
                ((0.5 - a).abs()).max(1.0)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((c.residual - best).abs() < 1e-12);
        let c1 = h.clip(&[0.5, 1.0], ClipNorm::L1).unwrap();
        assert!((c1.residual - 1.0).abs() < 1e-12);
        assert!((c1.projected[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interior_point_has_zero_residual() {
        let h = hull2(vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0]]);
        for norm in [ClipNorm::LInf, ClipNorm::L1] {
            let c = h.clip(&[1.0, 1.5], norm).unwrap();
            assert!(c.residual <= 1e-7);
            assert!(c.alpha.iter().all(|a| *a >= 0.0));
            assert!((c.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_rejects_bad_dimensions() {
        let h = hull2(vec![vec![0.0, 0.0]]);
        assert!(h.clip(&[1.0], ClipNorm::LInf).is_err());
        assert!(h.is_degenerate());
        assert!(HullModel::new(identity_basis(2), vec![]).is_err());
    }

    #[test]
    fn interval_projection_forms() {
        let naive = HyperRectReachSet {
            center: vec![1.0],
            sigma: vec![0.5],
            score_threshold: 0.5,
            guarantee: guarantee_confidence(0.1, 1, 1).unwrap(),
        };
        assert_eq!(project_intervals(&naive), (vec![0.5], vec![1.5]));

        let hull = hull2(vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![1.0, 3.0]]);
        let (lb, ub) = hull.lifted_bounds().unwrap();
        let rs = SurrogateReachSet {
            surrogate: Surrogate { hull, norm: ClipNorm::LInf },
            error_scale: CenterScale {
                center: vec![0.0, 0.0],
                tau: vec![1.0, 1.0],
                tau_star: 1e-5,
                floor_active: false,
            },
            error_sigma: vec![0.0, 0.25],
            score_threshold: 0.25,
            lift_lb: lb,
            lift_ub: ub,
            guarantee: guarantee_confidence(0.1, 1, 1).unwrap(),
        };
        let (lo, hi) = rs.project_intervals();
        assert_eq!(lo, vec![0.0, -0.25]);
        assert_eq!(hi, vec![2.0, 3.25]);
        assert_eq!(rs.total_width(), 2.0 + 3.5);
    }

    fn ring_model() -> MlpNetwork {
        // 2 → 3 → 2 with a ReLU kink so outputs are not affine in the input.
        MlpNetwork::new(
            vec![2, 3, 2],
            vec![
                vec![1.0, 0.5, -0.5, 1.0, 1.0, 1.0],
                vec![1.0, 0.0, -0.7, 0.0, 1.0, 0.4],
            ],
            vec![vec![0.1, -0.2, -0.5], vec![0.0, 0.3]],
        )
        .unwrap()
    }

    #[test]
    fn training_points_map_to_themselves_and_predictions_stay_in_bounds() {
        let model = ring_model();
        let spec = build_global_ball(ImageTensor::new(1, 2, 1, vec![0.2, -0.1]).unwrap(), BallNorm::Linf, 1.0)
            .unwrap();
        let train = sampling::sample_outputs(&model, &spec, 11, 40).unwrap();
        let surrogate = fit_surrogate(&train, 2, &SurrogateOptions::default()).unwrap();
        let (lb, ub) = surrogate.hull.lifted_bounds().unwrap();
        for y in &train {
            let g = surrogate.predict_from_output(y).unwrap();
            let back = surrogate.hull.basis.lift(&surrogate.hull.basis.reduce(y).unwrap()).unwrap();
            assert!(g.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
        }
        let fresh = sampling::sample_outputs(&model, &spec, 12, 300).unwrap();
        for y in &fresh {
            let g = surrogate.predict_from_output(y).unwrap();
            for k in 0..2 {
                assert!(g[k] >= lb[k] - 1e-8 && g[k] <= ub[k] + 1e-8);
            }
            let v = surrogate.hull.basis.reduce(&g).unwrap();
            let c = surrogate.hull.clip(&surrogate.hull.basis.reduce(y).unwrap(), ClipNorm::LInf).unwrap();
            assert!(v.iter().zip(&c.projected).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn identity_network_on_box() {
        let model = MlpNetwork::new(vec![2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]], vec![vec![0.0, 0.0]]).unwrap();
        let spec = build_global_ball(ImageTensor::new(1, 2, 1, vec![0.0, 0.0]).unwrap(), BallNorm::Linf, 1.0)
            .unwrap();
        let sizes = SurrogateSizes { train_t: 400, aux_t: 200, calib_m: 200, components: 2 };
        let g = guarantee_confidence(0.05, 195, 200).unwrap();
        let rs = build_surrogate_reachset(&model, &spec, sizes, g, &SurrogateOptions::default(), 3).unwrap();
        let (lo, hi) = rs.project_intervals();
        for k in 0..2 {
            assert!(lo[k] > -1.0 - 0.2 && lo[k] <= -0.9);
            assert!(hi[k] < 1.0 + 0.2 && hi[k] >= 0.9);
        }
    }

    #[test]
    fn soundness_chaining_and_determinism() {
        let model = ring_model();
        let spec = build_global_ball(ImageTensor::new(1, 2, 1, vec![0.2, -0.1]).unwrap(), BallNorm::L2, 1.0)
            .unwrap();
        let sizes = SurrogateSizes { train_t: 30, aux_t: 100, calib_m: 300, components: 2 };
        let g = guarantee_confidence(0.02, 297, 300).unwrap();
        let rs = build_surrogate_reachset(&model, &spec, sizes, g, &SurrogateOptions::default(), 5).unwrap();
        let again = build_surrogate_reachset(&model, &spec, sizes, g, &SurrogateOptions::default(), 5).unwrap();
        assert_eq!(rs, again);

        let (lo, hi) = rs.project_intervals();
        let outputs = sampling::sample_outputs(&model, &spec, 77, 10_000).unwrap();
        for y in &outputs {
            let q = rs.surrogate.error_from_output(y).unwrap();
            if rs.error_scale.score(&q).unwrap() <= rs.score_threshold {
                assert!((0..2).all(|k| lo[k] <= y[k] && y[k] <= hi[k]));
            }
        }
    }

    #[test]
    fn persistence_round_trip() {
        let model = ring_model();
        let spec = build_global_ball(ImageTensor::new(1, 2, 1, vec![0.0, 0.0]).unwrap(), BallNorm::Linf, 0.5)
            .unwrap();
        let sizes = SurrogateSizes { train_t: 20, aux_t: 20, calib_m: 50, components: 2 };
        let g = guarantee_confidence(0.1, 46, 50).unwrap();
        let rs = build_surrogate_reachset(&model, &spec, sizes, g, &SurrogateOptions::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        rs.save(dir.path(), 1).unwrap();
        let (back, seed) = SurrogateReachSet::load(dir.path()).unwrap();
        assert_eq!(seed, 1);
        assert_eq!(back.project_intervals(), rs.project_intervals());
        assert_eq!(back.surrogate.hull.points(), rs.surrogate.hull.points());
        std::fs::write(dir.path().join(HULL_FILE), b"HULL v1 20 2\n").unwrap();
        assert!(matches!(
            SurrogateReachSet::load(dir.path()),
            Err(ReachError::TruncatedPayload(_))
        ));
    }

    #[test]
    fn clip_matches_alpha_scan_on_random_triangles() {
        for seed in 0..20u64 {
            let mut rng = sample_rng(seed, 0);
            let pts: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
            let v = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let h = hull2(pts.clone());
            let c = h.clip(&v, ClipNorm::LInf).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..=400 {
                for j in 0..=(400 - i) {
                    let (a, b) = (i as f64 / 400.0, j as f64 / 400.0);
                    let w = 1.0 - a - b;
                    let d0 = (v[0] - a * pts[0][0] - b * pts[1][0] - w * pts[2][0]).abs();
                    let d1 = (v[1] - a * pts[0][1] - b * pts[1][1] - w * pts[2][1]).abs();
                    best = best.min(d0.max(d1));
                }
            }
            assert!(c.residual <= best + 1e-9 && best - c.residual < 2e-2, "seed {seed}");
        }
    }
}
