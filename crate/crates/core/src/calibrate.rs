//! Conformal calibration: training statistics, nonconformity scores and the
//! naive hyper-rectangular reachset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReachError, Result};
use crate::guarantees::GuaranteeSpec;
use crate::perturb::SamplingDistribution;

/// Relative size of the normalization floor `τ*` against the mean absolute
/// deviation of the training outputs.
pub const TAU_STAR_FACTOR: f64 = 1e-5;

/// Absolute floor under `τ*`, reached only by a constant training cloud.
pub const TAU_ABSOLUTE_FLOOR: f64 = 1e-12;

/// Center `c` and normalization factors `τ_k` fitted on training outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterScale {
    pub center: Vec<f64>,
    pub tau: Vec<f64>,
    pub tau_star: f64,
    /// Set when every deviation was zero and the absolute floor was used.
    pub floor_active: bool,
}

impl CenterScale {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `max_k |y(k) − c(k)| / τ_k`.
    pub fn score(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(ReachError::dim("nonconformity input", self.dim(), y.len()));
        }
        Ok(self.score_unchecked(y))
    }

    pub(crate) fn score_unchecked(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.center)
            .zip(&self.tau)
            .fold(0.0f64, |acc, ((v, c), t)| acc.max((v - c).abs() / t))
    }
}

/// Fits `c` as the componentwise mean and `τ_k = max(τ*, max_j |y_j(k) − c(k)|)`
/// with `τ* = 1e-5 · mean_{j,k} |y_j(k) − c(k)|`.
pub fn center_and_scales<T: AsRef<[f64]>>(train_outputs: &[T]) -> Result<CenterScale> {
    let Some(first) = train_outputs.first() else {
        return Err(ReachError::Domain("training set must not be empty".into()));
    };
    let n = first.as_ref().len();
    let t = train_outputs.len();
    let mut center = vec![0.0; n];
    for y in train_outputs {
        let y = y.as_ref();
        if y.len() != n {
            return Err(ReachError::dim("training output", n, y.len()));
        }
        for (c, v) in center.iter_mut().zip(y) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= t as f64;
    }
    if center.iter().any(|c| !c.is_finite()) {
        return Err(ReachError::InvalidData("non-finite training outputs".into()));
    }

    let mut max_dev = vec![0.0f64; n];
    let mut total_dev = 0.0;
    for y in train_outputs {
        for ((m, v), c) in max_dev.iter_mut().zip(y.as_ref()).zip(&center) {
            let d = (v - c).abs();
            total_dev += d;
            *m = m.max(d);
        }
    }
    let raw_star = TAU_STAR_FACTOR * total_dev / (n * t) as f64;
    let floor_active = !(raw_star >= TAU_ABSOLUTE_FLOOR);
    let tau_star = raw_star.max(TAU_ABSOLUTE_FLOOR);
    let tau = max_dev.iter().map(|d| d.max(tau_star)).collect();
    Ok(CenterScale {
        center,
        tau,
        tau_star,
        floor_active,
    })
}

pub fn nonconformity(y: &[f64], cs: &CenterScale) -> Result<f64> {
    cs.score(y)
}

/// What the calibration scores were computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    RawOutputs,
    SurrogateErrors,
}

/// Calibration scores, sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    scores: Vec<f64>,
    pub source: ScoreSource,
}

impl CalibrationSet {
    pub fn from_scores(mut scores: Vec<f64>, source: ScoreSource) -> Result<Self> {
        if scores.is_empty() {
            return Err(ReachError::Domain("calibration set must not be empty".into()));
        }
        if let Some(s) = scores.iter().find(|s| !(**s >= 0.0)) {
            return Err(ReachError::InvalidData(format!(
                "calibration score {s} is not a non-negative number"
            )));
        }
        scores.sort_by(f64::total_cmp);
        Ok(CalibrationSet { scores, source })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// ℓ-th smallest score, 1-indexed.
    pub fn rank(&self, rank_ell: usize) -> Result<f64> {
        if rank_ell == 0 || rank_ell > self.len() {
            return Err(ReachError::Domain(format!(
                "rank {rank_ell} outside 1..={}",
                self.len()
            )));
        }
        Ok(self.scores[rank_ell - 1])
    }
}

pub fn build_calibration<T: AsRef<[f64]> + Sync>(
    outputs: &[T],
    cs: &CenterScale,
    source: ScoreSource,
) -> Result<CalibrationSet> {
    let scores = outputs
        .par_iter()
        .map(|y| cs.score(y.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    CalibrationSet::from_scores(scores, source)
}

/// Box `[c − σ, c + σ]` with `σ_k = τ_k · R_ℓ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperRectReachSet {
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
    /// The threshold `R_ℓ` the box was built from.
    pub score_threshold: f64,
    pub guarantee: GuaranteeSpec,
}

impl HyperRectReachSet {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.sigma).map(|(c, s)| c - s).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.sigma).map(|(c, s)| c + s).collect()
    }
}

pub fn naive_reachset(
    calib: &CalibrationSet,
    cs: &CenterScale,
    guarantee: GuaranteeSpec,
) -> Result<HyperRectReachSet> {
    if guarantee.calib_size_m != calib.len() {
        return Err(ReachError::InvalidData(format!(
            "guarantee assumes m = {}, calibration set holds {}",
            guarantee.calib_size_m,
            calib.len()
        )));
    }
    let threshold = calib.rank(guarantee.rank_ell)?;
    Ok(HyperRectReachSet {
        center: cs.center.clone(),
        sigma: cs.tau.iter().map(|t| t * threshold).collect(),
        score_threshold: threshold,
        guarantee,
    })
}

/// Everything needed to audit a calibration step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationManifest {
    pub m: usize,
    pub ell: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub distribution: SamplingDistribution,
    pub source: ScoreSource,
    pub score_at_rank: f64,
    pub tau_star: f64,
    pub tau_floor_active: bool,
}

impl CalibrationManifest {
    pub fn new(
        calib: &CalibrationSet,
        cs: &CenterScale,
        guarantee: &GuaranteeSpec,
        seed: u64,
        distribution: SamplingDistribution,
    ) -> Result<Self> {
        Ok(CalibrationManifest {
            m: calib.len(),
            ell: guarantee.rank_ell,
            epsilon: guarantee.epsilon,
            seed,
            distribution,
            source: calib.source,
            score_at_rank: calib.rank(guarantee.rank_ell)?,
            tau_star: cs.tau_star,
            tau_floor_active: cs.floor_active,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantees::{beta_quantile, guarantee_confidence};
    use crate::seed::sample_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scale(center: Vec<f64>, tau: Vec<f64>) -> CenterScale {
        CenterScale {
            center,
            tau,
            tau_star: 1e-5,
            floor_active: false,
        }
    }

    #[test]
    fn two_point_training_set() {
        let cs = center_and_scales(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(cs.center, vec![1.0, 2.0]);
        assert!((cs.tau_star - 1.5e-5).abs() < 1e-20);
        assert_eq!(cs.tau, vec![1.0, 2.0]);
        assert!(!cs.floor_active);
    }

    #[test]
    fn constant_cloud_uses_absolute_floor() {
        let cs = center_and_scales(&vec![vec![3.0, 3.0]; 4]).unwrap();
        assert_eq!(cs.tau, vec![TAU_ABSOLUTE_FLOOR; 2]);
        assert!(cs.floor_active);
    }

    #[test]
    fn constant_coordinate_gets_tau_star() {
        let cs = center_and_scales(&[vec![0.0, 5.0], vec![1.0, 5.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(cs.tau[1], cs.tau_star);
        assert_eq!(cs.tau[0], 1.0);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(center_and_scales(&empty).is_err());
    }

    #[test]
    fn score_examples() {
        let cs = scale(vec![0.0, 0.0], vec![1.0, 2.0]);
        assert_eq!(nonconformity(&[1.0, 4.0], &cs).unwrap(), 2.0);
        assert_eq!(nonconformity(&[0.0, 0.0], &cs).unwrap(), 0.0);
        assert!(nonconformity(&[0.0], &cs).is_err());
    }

    #[test]
    fn calibration_sorts_with_multiplicity() {
        let set = CalibrationSet::from_scores(vec![2.0, 0.0, 1.0, 1.0], ScoreSource::RawOutputs).unwrap();
        assert_eq!(set.scores(), &[0.0, 1.0, 1.0, 2.0]);
        let single = CalibrationSet::from_scores(vec![0.7], ScoreSource::RawOutputs).unwrap();
        assert_eq!(single.rank(1).unwrap(), 0.7);
        assert!(CalibrationSet::from_scores(vec![-1.0], ScoreSource::RawOutputs).is_err());
    }

    #[test]
    fn naive_box_example() {
        let calib = CalibrationSet::from_scores(vec![0.5, 1.0, 2.0], ScoreSource::RawOutputs).unwrap();
        let cs = scale(vec![0.0, 0.0], vec![1.0, 3.0]);
        let g = guarantee_confidence(0.5, 2, 3).unwrap();
        let rs = naive_reachset(&calib, &cs, g).unwrap();
        assert_eq!(rs.sigma, vec![1.0, 3.0]);
        assert_eq!(rs.lower(), vec![-1.0, -3.0]);
        assert_eq!(rs.upper(), vec![1.0, 3.0]);
        assert_eq!(cs.score(&rs.upper()).unwrap(), rs.score_threshold);

        let top = naive_reachset(&calib, &cs, guarantee_confidence(0.5, 3, 3).unwrap()).unwrap();
        assert_eq!(top.score_threshold, 2.0);
        let wrong_m = guarantee_confidence(0.5, 2, 4).unwrap();
        assert!(naive_reachset(&calib, &cs, wrong_m).is_err());
    }

    #[test]
    fn raising_rank_never_shrinks_sigma() {
        let calib = CalibrationSet::from_scores((0..50).map(|i| (i % 7) as f64).collect(), ScoreSource::RawOutputs)
            .unwrap();
        let cs = scale(vec![0.0; 3], vec![0.5, 1.0, 2.0]);
        let mut prev = vec![0.0; 3];
        for ell in 1..=50 {
            let rs = naive_reachset(&calib, &cs, guarantee_confidence(0.1, ell, 50).unwrap()).unwrap();
            assert!(rs.sigma.iter().zip(&prev).all(|(s, p)| s >= p));
            prev = rs.sigma;
        }
    }

    #[test]
    fn score_threshold_matches_box_membership() {
        let mut rng = sample_rng(99, 0);
        let cs = scale(vec![0.3, -1.0, 2.0], vec![0.7, 1.3, 0.01]);
        let threshold = 1.1;
        let sigma: Vec<f64> = cs.tau.iter().map(|t| t * threshold).collect();
        for _ in 0..10_000 {
            let y: Vec<f64> = (0..3)
                .map(|k| cs.center[k] + 1.5 * sigma[k] * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            let by_score = cs.score(&y).unwrap() <= threshold;
            let by_box = (0..3).all(|k| (y[k] - cs.center[k]).abs() <= sigma[k]);
            assert_eq!(by_score, by_box);
        }
    }

    #[test]
    fn gaussian_coverage_is_beta_consistent() {
        let (m, ell, eps) = (1000, 995, 0.01);
        let guarantee = guarantee_confidence(eps, ell, m).unwrap();
        let cutoff = beta_quantile(0.999, (m + 1 - ell) as f64, ell as f64).unwrap();
        let draw = |seed: u64, count: usize| -> Vec<Vec<f64>> {
            (0..count as u64)
                .map(|i| {
                    let mut rng = sample_rng(seed, i);
                    (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect()
        };
        let mut exceedances = 0;
        for s in 0..20u64 {
            let cs = center_and_scales(&draw(3 * s, 500)).unwrap();
            let calib = build_calibration(&draw(3 * s + 1, m), &cs, ScoreSource::RawOutputs).unwrap();
            let rs = naive_reachset(&calib, &cs, guarantee).unwrap();
            let (lo, hi) = (rs.lower(), rs.upper());
            let fresh = draw(3 * s + 2, 100_000);
            let outside = fresh
                .iter()
                .filter(|y| y.iter().enumerate().any(|(k, v)| *v < lo[k] || *v > hi[k]))
                .count();
            if outside as f64 / fresh.len() as f64 > cutoff {
                exceedances += 1;
            }
        }
        assert!(exceedances <= 1, "{exceedances} exceedances");
    }

    proptest! {
        #[test]
        fn score_is_positively_homogeneous(s in 0.01f64..100.0, d in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let cs = scale(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 1.0, 2.0, 4.0]);
            let y: Vec<f64> = cs.center.iter().zip(&d).map(|(c, v)| c + v).collect();
            let ys: Vec<f64> = cs.center.iter().zip(&d).map(|(c, v)| c + s * v).collect();
            let (a, b) = (cs.score(&y).unwrap(), cs.score(&ys).unwrap());
            prop_assert!((b - s * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn fitted_scales_dominate_floor(data in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..20)) {
            let cs = center_and_scales(&data).unwrap();
            prop_assert!(cs.tau_star > 0.0);
            prop_assert!(cs.tau.iter().all(|t| *t >= cs.tau_star));
            for y in &data {
                prop_assert!(cs.score(y).unwrap() <= 1.0 + 1e-12);
            }
        }
    }
}
