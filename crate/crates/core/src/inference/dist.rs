//! Normal and chi-square tail probabilities on top of `statrs`:
//! `Φ(z) = 1 − erfc(z/√2)/2` and `P(χ²_k > x) = Q(k/2, x/2)`.

use statrs::function::{erf, gamma};

use crate::error::{Result, SemError};

pub use statrs::function::gamma::ln_gamma;

/// Regularized upper incomplete gamma Q(a, x); 1 for x ≤ 0.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma::checked_gamma_ur(a, x).unwrap_or(f64::NAN)
}

/// Regularized lower incomplete gamma P(a, x); 0 for x ≤ 0.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma::checked_gamma_lr(a, x).unwrap_or(f64::NAN)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    erf::erfc(x)
}

/// Standard normal CDF Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let tail = 0.5 * erfc(z.abs() / std::f64::consts::SQRT_2);
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Two-sided normal p-value, 2(1 − Φ(|z|)), computed from the tail directly.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper-tail chi-square probability P(χ²_df > x).
pub fn chisq_sf(x: f64, df: i64) -> Result<f64> {
    if df < 1 {
        return Err(SemError::InvalidDf(df));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}
