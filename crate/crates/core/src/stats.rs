//! Scalar special functions and small order statistics.

use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this the log-CDF switches to its asymptotic expansion; `erfc`
/// underflows shortly after.
const LOG_CDF_ASYMPTOTIC_BELOW: f64 = -35.0;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

fn asymptotic_tail_factor(z: f64) -> f64 {
    let z2 = z * z;
    1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
}

/// `ln Φ(z)` without underflow for very negative `z` and without losing
/// precision as `Φ(z) → 1`.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z > 5.0 {
        (-0.5 * erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z > LOG_CDF_ASYMPTOTIC_BELOW {
        norm_cdf(z).ln()
    } else {
        -0.5 * z * z - LN_SQRT_2PI - (-z).ln() + asymptotic_tail_factor(z).ln()
    }
}

/// `φ(z) / Φ(z)`, the derivative of `ln Φ`.
pub fn inverse_mills(z: f64) -> f64 {
    if z > LOG_CDF_ASYMPTOTIC_BELOW {
        (-0.5 * z * z - LN_SQRT_2PI - log_norm_cdf(z)).exp()
    } else {
        -z / asymptotic_tail_factor(z)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Linear-interpolated quantile of already sorted data (type 7, as numpy's default).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// `√(2π)`; exposed for the closed-form spot checks in tests.
pub fn sqrt_two_pi() -> f64 {
    (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_at_zero() {
        assert!((norm_pdf(0.0) - 1.0 / sqrt_two_pi()).abs() < 1e-16);
    }

    #[test]
    fn log_cdf_is_continuous_across_branches() {
        for &z in &[5.0, LOG_CDF_ASYMPTOTIC_BELOW] {
            let below = log_norm_cdf(z - 1e-9);
            let above = log_norm_cdf(z + 1e-9);
            assert!((below - above).abs() < 1e-6 * (1.0 + below.abs()), "{z}");
        }
    }

    #[test]
    fn log_cdf_saturates_without_overflow() {
        let v = log_norm_cdf(100.0);
        assert!(v <= 0.0 && v > -1e-300);
        let w = log_norm_cdf(-100.0);
        assert!(w.is_finite() && w < -5000.0);
    }

    #[test]
    fn inverse_mills_matches_ratio() {
        for &z in &[-3.0, -0.5, 0.0, 1.2, 6.0] {
            let r = norm_pdf(z) / norm_cdf(z);
            assert!((inverse_mills(z) - r).abs() < 1e-12 * (1.0 + r), "{z}");
        }
        // far tail: φ/Φ ~ -z
        assert!((inverse_mills(-60.0) / 60.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn softplus_extremes() {
        assert_eq!(softplus(-800.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((log_sigmoid(1.0) + 0.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
