//! Discretized Gaussian likelihood: the probability a normal variable
//! lands within ±1/2 of an integer lattice point. This is the entropy
//! model for both latents — `y` conditioned on the hyper-decoded (μ, σ)
//! and `z` under its per-channel learned prior.

use std::f64::consts::SQRT_2;

/// Lower bound on every reported likelihood (2⁻¹⁶). Matches the minimum
/// mass a symbol can hold in a 16-bit coding table, so anything the model
/// can emit is decodable.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 65536.0;

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Interval likelihood and its partial derivatives. When the raw mass
/// falls below [`LIKELIHOOD_FLOOR`], the value is clamped and the
/// derivatives zeroed (`floored` marks the clamp for kink detection).
#[derive(Debug, Clone, Copy)]
pub struct IntervalLikelihood {
    pub p: f64,
    pub dp_dv: f64,
    pub dp_dmu: f64,
    pub dp_dsigma: f64,
    pub floored: bool,
}

/// P(v − 1/2 < X ≤ v + 1/2) for X ~ N(μ, σ²).
///
/// Computed from |v − μ| so that symmetric offsets give bitwise-identical
/// probabilities.
pub fn gaussian_interval(v: f64, mu: f64, sigma: f64) -> IntervalLikelihood {
    debug_assert!(sigma > 0.0, "sigma must be positive");
    let d = v - mu;
    let a = d.abs();
    let u_hi = (a + 0.5) / sigma;
    let u_lo = (a - 0.5) / sigma;
    let p_raw = std_normal_cdf(u_hi) - std_normal_cdf(u_lo);
    if p_raw < LIKELIHOOD_FLOOR {
        return IntervalLikelihood {
            p: LIKELIHOOD_FLOOR,
            dp_dv: 0.0,
            dp_dmu: 0.0,
            dp_dsigma: 0.0,
            floored: true,
        };
    }
    let pdf_hi = std_normal_pdf(u_hi);
    let pdf_lo = std_normal_pdf(u_lo);
    let dp_dd = d.signum() * (pdf_hi - pdf_lo) / sigma;
    let dp_dsigma = -(pdf_hi * u_hi - pdf_lo * u_lo) / sigma;
    IntervalLikelihood {
        p: p_raw,
        dp_dv: dp_dd,
        dp_dmu: -dp_dd,
        dp_dsigma,
        floored: false,
    }
}
