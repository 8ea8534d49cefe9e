//! Differentiable fringe decode used during training.
//!
//! The bitstream decoder recovers depth from a fringe image by snapping
//! the order channel to the nearest integer, which has zero gradient
//! almost everywhere. Training instead uses a smooth surrogate
//! `soft_round(x) = x - sin(2πx)/(2π)`: exact at integers, C-infinity,
//! and with derivative `1 - cos(2πx)` averaging one over a period, so the
//! order channel keeps a usable gradient while reconstruction still snaps
//! toward integer fringe orders.

use ndarray::{Array2, Array3};

/// Gradient denominator floor for the phase angle. The true derivative of
/// atan2 scales like 1/radius² and explodes near the circle center; below
/// this radius the backward pass substitutes the floor, trading bias for
/// bounded updates. The forward value is always the true angle.
pub const PHASE_RADIUS_FLOOR: f64 = 0.1;

/// Smooth surrogate for rounding: identity at integers, flat-ish between.
pub fn soft_round(x: f64) -> f64 {
    x - (std::f64::consts::TAU * x).sin() / std::f64::consts::TAU
}

pub fn soft_round_grad(x: f64) -> f64 {
    1.0 - (std::f64::consts::TAU * x).cos()
}

/// Intermediates of the forward decode needed by the backward pass.
pub struct FringeDecodeCache {
    sr: Array2<f64>,
    cg: Array2<f64>,
    kr: Array2<f64>,
    rho: f64,
}

/// Decodes a fringe image `(3, h, w)` with channels (sin, cos, order) to
/// normalized depth `Z'/z_range` in a way that is differentiable
/// everywhere. `rho = z_range / period` is the number of fringe periods
/// across the depth range.
pub fn fringe_decode_train(x_hat: &Array3<f64>, rho: f64) -> (Array2<f64>, FringeDecodeCache) {
    assert_eq!(x_hat.dim().0, 3, "fringe image must have 3 channels");
    assert!(rho > 0.0, "rho must be positive, got {rho}");
    let (_, h, w) = x_hat.dim();
    let mut sr = Array2::zeros((h, w));
    let mut cg = Array2::zeros((h, w));
    let mut kr = Array2::zeros((h, w));
    let mut z = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let s = 2.0 * x_hat[[0, i, j]] - 1.0;
            let c = 2.0 * x_hat[[1, i, j]] - 1.0;
            let b = x_hat[[2, i, j]];
            let phi = s.atan2(c);
            // Fractional position within the fringe period, in [0, 1).
            let f = phi / std::f64::consts::TAU + if phi < 0.0 { 1.0 } else { 0.0 };
            let k_real = b * rho - f;
            let k = soft_round(k_real);
            sr[[i, j]] = s;
            cg[[i, j]] = c;
            kr[[i, j]] = k_real;
            z[[i, j]] = (k + f) / rho;
        }
    }
    (z, FringeDecodeCache { sr, cg, kr, rho })
}

/// Backpropagates normalized-depth gradients to the fringe image.
pub fn fringe_decode_train_backward(
    cache: &FringeDecodeCache,
    dz: &Array2<f64>,
) -> Array3<f64> {
    let (h, w) = dz.dim();
    assert_eq!(cache.sr.dim(), (h, w), "cache/gradient shape mismatch");
    let rho = cache.rho;
    let d2_floor = PHASE_RADIUS_FLOOR * PHASE_RADIUS_FLOOR;
    let mut gx = Array3::zeros((3, h, w));
    for i in 0..h {
        for j in 0..w {
            let g = dz[[i, j]];
            if g == 0.0 {
                continue;
            }
            let dk = g / rho;
            let mut df = g / rho;
            let dkr = dk * soft_round_grad(cache.kr[[i, j]]);
            gx[[2, i, j]] = dkr * rho;
            df -= dkr;
            let dphi = df / std::f64::consts::TAU;
            let s = cache.sr[[i, j]];
            let c = cache.cg[[i, j]];
            let d2 = (s * s + c * c).max(d2_floor);
            let ds = dphi * c / d2;
            let dc = -dphi * s / d2;
            gx[[0, i, j]] = 2.0 * ds;
            gx[[1, i, j]] = 2.0 * dc;
        }
    }
    gx
}
