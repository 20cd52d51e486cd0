//! Beta-distribution calculus behind the `<ε, ℓ, m>` guarantee.
//!
//! With `m` i.i.d. calibration scores sorted ascending and `R_ℓ` the ℓ-th
//! smallest, the coverage `Pr[R_unseen ≤ R_ℓ]` is itself a random variable
//! distributed as `Beta(ℓ, m + 1 − ℓ)`. The guarantee reads
//!
//! ```text
//! Pr[ Pr[R_unseen ≤ R_ℓ] > 1 − ε ] > 1 − I_{1−ε}(ℓ, m + 1 − ℓ)
//! ```
//!
//! where `I_x(a, b)` is the regularized incomplete beta function. Shape
//! parameters reach ~10^7, so every Gamma factor is carried in log space.

use serde::{Deserialize, Serialize};

use crate::error::{ReachError, Result};

/// Coverage/confidence pair of an `<ε, ℓ, m>` guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeSpec {
    pub epsilon: f64,
    pub rank_ell: usize,
    pub calib_size_m: usize,
    /// δ1 = 1 − ε.
    pub coverage_delta1: f64,
    /// δ2 = 1 − I_{1−ε}(ℓ, m + 1 − ℓ).
    pub confidence_delta2: f64,
    /// 1 − δ2, kept separately because δ2 is often within 1e-7 of one.
    pub confidence_shortfall: f64,
}

impl GuaranteeSpec {
    /// Recomputes δ2 from (ε, ℓ, m).
    pub fn recompute_confidence(&self) -> Result<f64> {
        guarantee_confidence(self.epsilon, self.rank_ell, self.calib_size_m)
            .map(|g| g.confidence_delta2)
    }
}

/// Builds the full guarantee for miscoverage `epsilon`, rank `rank_ell` and
/// calibration size `calib_size_m`.
pub fn guarantee_confidence(
    epsilon: f64,
    rank_ell: usize,
    calib_size_m: usize,
) -> Result<GuaranteeSpec> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ReachError::Domain(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    check_rank(rank_ell, calib_size_m)?;
    let a = rank_ell as f64;
    let b = (calib_size_m + 1 - rank_ell) as f64;
    let shortfall = beta_cdf(1.0 - epsilon, a, b)?;
    Ok(GuaranteeSpec {
        epsilon,
        rank_ell,
        calib_size_m,
        coverage_delta1: 1.0 - epsilon,
        confidence_delta2: 1.0 - shortfall,
        confidence_shortfall: shortfall,
    })
}

/// Mean and variance of `Beta(ℓ, m + 1 − ℓ)`.
pub fn beta_moments(rank_ell: usize, calib_size_m: usize) -> Result<(f64, f64)> {
    check_rank(rank_ell, calib_size_m)?;
    let l = rank_ell as f64;
    let m1 = calib_size_m as f64 + 1.0;
    let mean = l / m1;
    let variance = l * (m1 - l) / (m1 * m1 * (m1 + 1.0));
    Ok((mean, variance))
}

/// Rank `⌈(m + 1)(1 − ε)⌉` of the one-step marginal guarantee, clamped to
/// `[1, m]`.
pub fn select_rank(calib_size_m: usize, epsilon: f64) -> Result<usize> {
    if calib_size_m == 0 {
        return Err(ReachError::Domain("calibration size must be >= 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ReachError::Domain(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let raw = ((calib_size_m as f64 + 1.0) * (1.0 - epsilon)).ceil();
    Ok((raw.max(1.0) as usize).min(calib_size_m))
}

fn check_rank(rank_ell: usize, calib_size_m: usize) -> Result<()> {
    if rank_ell == 0 || rank_ell > calib_size_m {
        return Err(ReachError::Domain(format!(
            "rank must satisfy 1 <= ell <= m, got ell = {rank_ell}, m = {calib_size_m}"
        )));
    }
    Ok(())
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(ReachError::Domain(format!("x must lie in [0, 1], got {x}")));
    }
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(ReachError::Domain(format!(
            "shape parameters must be positive and finite, got a = {a}, b = {b}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let lower_tail = x < (a + 1.0) / (a + b + 2.0);
    if lower_tail {
        if let Some(v) = integer_b_series(x, a, b) {
            return Ok(v);
        }
    }
    let log_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let value = if lower_tail {
        log_front.exp() * continued_fraction(x, a, b)? / a
    } else {
        1.0 - log_front.exp() * continued_fraction(1.0 - x, b, a)? / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Inverse of [`beta_cdf`] in `x`, by bisection to full double precision.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ReachError::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_cdf(mid, a, b)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// For integer b, I_x(a, b) = x^a Σ_{j<b} C(a+j-1, j) (1-x)^j, a sum of
// positive terms that stays accurate where the continued fraction converges
// slowly (x just below (a+1)/(a+b+2) with a huge).
fn integer_b_series(x: f64, a: f64, b: f64) -> Option<f64> {
    const MAX_TERMS: f64 = 2048.0;
    if b.fract() != 0.0 || b > MAX_TERMS {
        return None;
    }
    let log_first = a * x.ln();
    if log_first < -700.0 {
        return None;
    }
    let y = 1.0 - x;
    let mut term = log_first.exp();
    let mut sum = term;
    for j in 1..b as usize {
        let j = j as f64;
        term *= (a + j - 1.0) / j * y;
        sum += term;
    }
    sum.is_finite().then(|| sum.min(1.0))
}

const TINY: f64 = 1e-300;

// Modified Lentz evaluation of the continued fraction for I_x(a, b); converges
// quickly for x < (a + 1) / (a + b + 2), in O(sqrt(max(a, b))) terms.
fn continued_fraction(x: f64, a: f64, b: f64) -> Result<f64> {
    let eps = 4.0 * f64::EPSILON;
    let max_iter = 10_000 + (200.0 * a.max(b).sqrt()) as usize;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < eps {
            return Ok(h);
        }
    }
    Err(ReachError::Numerical(format!(
        "incomplete beta continued fraction did not converge (x = {x}, a = {a}, b = {b})"
    )))
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 671/128, 14 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COF: [f64; 14] = [
        57.156_235_665_862_923_5,
        -59.597_960_355_475_491_2,
        14.136_097_974_741_747_1,
        -0.491_913_816_097_620_199,
        0.339_946_499_848_118_887e-4,
        0.465_236_289_270_485_756e-4,
        -0.983_744_753_048_795_646e-4,
        0.158_088_703_224_912_494e-3,
        -0.210_264_441_724_104_883e-3,
        0.217_439_618_115_212_643e-3,
        -0.164_318_106_536_763_890e-3,
        0.844_182_239_838_527_433e-4,
        -0.261_908_384_015_814_087e-4,
        0.368_991_826_595_316_234e-5,
    ];
    let mut y = x;
    let tmp = x + 5.242_187_5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    for c in COF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

// Remainder of Stirling's series, ln Γ(x) − [(x − ½) ln x − x + ½ ln 2π],
// accurate to ~3e-17 for x >= 10.
fn stirling_correction(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        + r2 * (-1.0 / 360.0
            + r2 * (1.0 / 1260.0
                + r2 * (-1.0 / 1680.0
                    + r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360_360.0 + r2 / 156.0))))))
}

/// `ln B(a, b)` without cancellation between large `ln Γ` terms.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let p = a.min(b);
    let q = a.max(b);
    let ratio = p / (p + q);
    if p >= 10.0 {
        let corr = stirling_correction(p) + stirling_correction(q) - stirling_correction(p + q);
        -0.5 * q.ln() + HALF_LN_2PI + corr + (p - 0.5) * ratio.ln() + q * (-ratio).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_correction(q) - stirling_correction(p + q);
        ln_gamma(p) + corr + p - p * (p + q).ln() + (q - 0.5) * (-ratio).ln_1p()
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Reference values computed with mpmath.betainc at 40 digits.
    const MPMATH: &[(f64, f64, f64, f64)] = &[
        (0.9999, 99999.0, 2.0, 4.991_949_553_207_090_8e-4),
        (0.9999, 199998.0, 3.0, 4.551_440_681_343_715_8e-7),
        (0.999, 7999.0, 2.0, 3.009_778_748_866_794_5e-3),
        (0.99, 920.0, 2.0, 9.839_639_823_044_257e-4),
        (0.999998, 8464286.0, 2.0, 7.971_736_624_058_753_8e-7),
        (0.3, 2.5, 3.5, 0.296_752_989_295_666_4),
        (0.7, 0.5, 0.5, 0.630_989_880_434_454_6),
        (0.2, 10.0, 30.0, 0.241_359_451_280_791_4),
        (0.5, 1000.0, 1000.0, 0.5),
        (0.51, 1000.0, 1000.0, 0.814_447_340_568_488_3),
        (0.001, 0.1, 5.0, 0.612_898_359_374_994_5),
        (0.95, 50.0, 3.0, 0.514_569_522_163_020_4),
        (0.4, 200.5, 300.25, 0.495_142_739_331_521_7),
    ];

    #[test]
    fn matches_high_precision_reference() {
        for &(x, a, b, want) in MPMATH {
            let got = beta_cdf(x, a, b).unwrap();
            assert!(
                rel(got, want) < 1e-11,
                "I_{x}({a}, {b}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn endpoint_and_uniform_cases() {
        assert_eq!(beta_cdf(1.0, 3.0, 4.0).unwrap(), 1.0);
        assert_eq!(beta_cdf(0.0, 3.0, 4.0).unwrap(), 0.0);
        assert!((beta_cdf(0.5, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn appendix_examples() {
        let v = beta_cdf(0.9999, 99999.0, 2.0).unwrap();
        assert!((v - 0.0004992).abs() < 5e-8);
        assert!((1.0 - v - 0.9995008).abs() < 5e-8);
        assert!(beta_cdf(0.9999, 199998.0, 3.0).unwrap() <= 5e-7);
    }

    #[test]
    fn domain_errors() {
        assert!(beta_cdf(-0.1, 1.0, 1.0).is_err());
        assert!(beta_cdf(1.1, 1.0, 1.0).is_err());
        assert!(beta_cdf(0.5, 0.0, 1.0).is_err());
        assert!(beta_cdf(0.5, 1.0, -2.0).is_err());
        assert!(beta_cdf(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn integer_shape_closed_form() {
        // For integer a and b = 2: I_x(a, 2) = x^a (a + 1 − a x).
        for &(x, a) in &[(0.9999f64, 99999.0f64), (0.999, 7999.0), (0.5, 3.0), (0.99, 920.0)] {
            let closed = (a * x.ln()).exp() * (a + 1.0 - a * x);
            assert!(rel(beta_cdf(x, a, 2.0).unwrap(), closed) < 1e-10);
        }
    }

    #[test]
    fn ln_gamma_factorials() {
        let mut fact = 1.0f64;
        for n in 1..30u32 {
            fact *= n as f64;
            let lg = ln_gamma(n as f64 + 1.0);
            assert!((lg - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0), "n = {n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn ln_beta_branches_agree_with_direct_sum() {
        for &(a, b) in &[(12.0, 15.0), (3.0, 40.0), (2.5, 4.5), (40.0, 3.0), (11.0, 11.0)] {
            let direct = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
            assert!((ln_beta(a, b) - direct).abs() < 1e-12, "({a}, {b})");
        }
    }

    #[test]
    fn guarantee_reference_settings() {
        let g = guarantee_confidence(1e-4, 99999, 100000).unwrap();
        assert!((g.confidence_delta2 - 0.9995008).abs() < 1e-6);
        assert_eq!(g.coverage_delta1, 1.0 - 1e-4);
        let g = guarantee_confidence(2e-6, 8464286, 8464287).unwrap();
        assert!(g.confidence_delta2 > 0.9999992);
        let g = guarantee_confidence(0.001, 7999, 8000).unwrap();
        assert!((g.confidence_delta2 - 0.997).abs() < 1e-3);
    }

    #[test]
    fn guarantee_rejects_bad_rank() {
        assert!(guarantee_confidence(0.01, 0, 10).is_err());
        assert!(guarantee_confidence(0.01, 11, 10).is_err());
        assert!(guarantee_confidence(0.0, 5, 10).is_err());
        assert!(guarantee_confidence(1.0, 5, 10).is_err());
    }

    #[test]
    fn guarantee_recomputation_is_bitwise_stable() {
        let g = guarantee_confidence(0.005, 1998, 2000).unwrap();
        assert_eq!(g.recompute_confidence().unwrap().to_bits(), g.confidence_delta2.to_bits());
    }

    #[test]
    fn moments() {
        let (mean, var) = beta_moments(7999, 8000).unwrap();
        assert_eq!(mean, 7999.0 / 8001.0);
        assert!((var - 3.123e-8).abs() < 1e-11);
        let (mean, var) = beta_moments(1, 1).unwrap();
        assert_eq!(mean, 0.5);
        assert!((var - 1.0 / 12.0).abs() < 1e-15);
        assert!(beta_moments(0, 3).is_err());
        assert!(beta_moments(4, 3).is_err());
    }

    #[test]
    fn rank_selection() {
        assert_eq!(select_rank(100, 0.05).unwrap(), 96);
        assert_eq!(select_rank(8000, 0.001).unwrap(), 7993);
        assert_eq!(select_rank(1, 0.5).unwrap(), 1);
        // Ceiling above m clamps.
        assert_eq!(select_rank(10, 0.01).unwrap(), 10);
        assert!(select_rank(0, 0.1).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &(p, a, b) in &[(0.999, 3.0, 1998.0), (0.5, 2.0, 5.0), (0.01, 50.0, 3.0)] {
            let q = beta_quantile(p, a, b).unwrap();
            assert!((beta_cdf(q, a, b).unwrap() - p).abs() < 1e-12);
        }
    }
}
