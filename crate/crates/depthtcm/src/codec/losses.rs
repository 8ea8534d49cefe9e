//! Training losses on normalized depth reconstructions.
//!
//! All reconstruction losses take depth normalized to [0,1] by the scene
//! range; the MSE term is rescaled by 255² so its magnitude matches the
//! 8-bit convention of the rate term it is traded against. Each loss has a
//! `_backward` variant returning the value together with its gradient so
//! the training loop can chain them; the plain functions just discard the
//! gradient.

use ndarray::Array2;

use super::CodecError;

/// 255², the rescaling that puts normalized-depth MSE on the 8-bit scale.
pub const PIXEL_SCALE: f64 = 255.0 * 255.0;

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Rate–distortion multiplier on the MSE term.
    pub lambda: f64,
    /// Weight of the total-variation smoothness term.
    pub w_tv: f64,
    /// Relative threshold of the confidence-aware term.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.05,
            w_tv: 0.001,
            tau: 0.05,
        }
    }
}

/// The four loss components, pre-weighting.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub mse: f64,
    pub bpp: f64,
    pub conf: f64,
    pub tv: f64,
}

/// Weighted total: `λ·255²·L_mse + L_bpp + L_conf + w_tv·L_tv`.
pub fn loss_total(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda * (PIXEL_SCALE * parts.mse) + parts.bpp + parts.conf + w.w_tv * parts.tv
}

/// Mean squared error over valid pixels, with its gradient w.r.t. the
/// reconstruction.
pub fn loss_mse_backward(
    recon: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(f64, Array2<f64>), CodecError> {
    let n_valid = mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(CodecError::EmptyMask);
    }
    let mut sum = 0.0;
    let mut grad = Array2::zeros(recon.dim());
    for ((g, (&r, &t)), &m) in grad
        .iter_mut()
        .zip(recon.iter().zip(target.iter()))
        .zip(mask.iter())
    {
        if m {
            let e = r - t;
            sum += e * e;
            *g = 2.0 * e / n_valid as f64;
        }
    }
    Ok((sum / n_valid as f64, grad))
}

pub fn loss_mse(
    recon: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<f64, CodecError> {
    loss_mse_backward(recon, target, mask).map(|(v, _)| v)
}

/// Confidence-aware error term: pixels whose absolute error exceeds
/// `τ · max|error|` contribute their squared error, averaged over *all*
/// valid pixels. The threshold is treated as a constant in the gradient.
/// Also returns the selection mask so callers can detect threshold
/// crossings between evaluations.
pub fn loss_conf_backward(
    recon: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<bool>), CodecError> {
    assert!((0.0..1.0).contains(&tau) && tau > 0.0, "tau {tau} outside (0,1)");
    let n_valid = mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(CodecError::EmptyMask);
    }
    let mut max_abs = 0.0f64;
    for ((&r, &t), &m) in recon.iter().zip(target.iter()).zip(mask.iter()) {
        if m {
            max_abs = max_abs.max((r - t).abs());
        }
    }
    let threshold = tau * max_abs;
    let mut sum = 0.0;
    let mut grad = Array2::zeros(recon.dim());
    let mut selected = Array2::from_elem(recon.dim(), false);
    for (((g, s), (&r, &t)), &m) in grad
        .iter_mut()
        .zip(selected.iter_mut())
        .zip(recon.iter().zip(target.iter()))
        .zip(mask.iter())
    {
        if m {
            let e = r - t;
            if e.abs() > threshold {
                sum += e * e;
                *g = 2.0 * e / n_valid as f64;
                *s = true;
            }
        }
    }
    Ok((sum / n_valid as f64, grad, selected))
}

pub fn loss_conf(
    recon: &Array2<f64>,
    target: &Array2<f64>,
    mask: &Array2<bool>,
    tau: f64,
) -> Result<f64, CodecError> {
    loss_conf_backward(recon, target, mask, tau).map(|(v, _, _)| v)
}

/// Isotropic total variation: for each pixel with both forward neighbors,
/// `sqrt(dx² + dy²)` summed over the grid. Terms at exactly zero gradient
/// contribute nothing to the derivative (subgradient 0).
pub fn loss_tv_backward(x: &Array2<f64>) -> (f64, Array2<f64>) {
    let (h, w) = x.dim();
    let mut sum = 0.0;
    let mut grad = Array2::zeros((h, w));
    for i in 0..h.saturating_sub(1) {
        for j in 0..w.saturating_sub(1) {
            let dx = x[[i, j + 1]] - x[[i, j]];
            let dy = x[[i + 1, j]] - x[[i, j]];
            let t = (dx * dx + dy * dy).sqrt();
            sum += t;
            if t > 0.0 {
                grad[[i, j]] -= (dx + dy) / t;
                grad[[i, j + 1]] += dx / t;
                grad[[i + 1, j]] += dy / t;
            }
        }
    }
    (sum, grad)
}

pub fn loss_tv(x: &Array2<f64>) -> f64 {
    loss_tv_backward(x).0
}
