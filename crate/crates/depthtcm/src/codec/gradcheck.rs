//! Finite-difference verification of the hand-written backward passes.
//!
//! The full training loss is evaluated in frozen-noise mode, so repeated
//! evaluations see one fixed smooth function. Central differences are
//! taken at two step sizes; a probe only counts when the two estimates
//! agree to three digits, which rejects parameters whose perturbation
//! crosses a non-smooth point (activation kinks, likelihood floors,
//! threshold selections) where a finite difference is meaningless. A
//! derivative smaller than the difference's own cancellation noise
//! (~ε·|loss|/h) is equally uncertifiable and is rejected the same way.
//! Accepted pairs are Richardson-extrapolated, cancelling the leading
//! O(h²) truncation term. Probes are drawn at random until the requested
//! number is accepted or the candidate budget runs out.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use super::losses::{loss_total, LossWeights};
use super::model::CodecModel;
use super::nn::Params;
use super::train::{forward_backward, forward_loss, QuantMode, Sample};
use super::CodecError;
use ndarray::Array3;

/// One verified probe: parameter index, analytic derivative, converged
/// numeric derivative, and their relative error.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Candidates rejected by the two-step-size consistency gate.
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn all_within(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

fn read_param(model: &mut CodecModel, index: usize) -> f64 {
    let mut out = 0.0;
    let mut i = 0;
    model.for_each_param(&mut |p, _| {
        if i == index {
            out = *p;
        }
        i += 1;
    });
    out
}

fn write_param(model: &mut CodecModel, index: usize, value: f64) {
    let mut i = 0;
    model.for_each_param(&mut |p, _| {
        if i == index {
            *p = value;
        }
        i += 1;
    });
}

/// Checks `n_probes` randomly chosen parameter derivatives of the full
/// training loss against central differences, spending at most
/// `max_candidates` attempts. Returns the accepted probes with their
/// relative errors; callers judge them against their tolerance.
pub fn gradient_check(
    model: &mut CodecModel,
    sample: &Sample,
    w: &LossWeights,
    n_probes: usize,
    max_candidates: usize,
    seed: u64,
) -> Result<GradCheckReport, CodecError> {
    let (_, h_px, w_px) = sample.x.dim();
    let (y_dim, z_dim) = model.latent_dims(h_px, w_px);
    let mut noise_rng = ChaCha20Rng::seed_from_u64(seed);
    let u_y = Array3::from_shape_fn(y_dim, |_| noise_rng.random_range(-0.5..0.5));
    let u_z = Array3::from_shape_fn(z_dim, |_| noise_rng.random_range(-0.5..0.5));
    let mode = QuantMode::Frozen {
        u_y: &u_y,
        u_z: &u_z,
    };
    let mut dummy_rng = ChaCha20Rng::seed_from_u64(0);

    model.zero_grads();
    forward_backward(model, sample, w, &mode, &mut dummy_rng, 1.0)?;
    let mut analytic = Vec::with_capacity(model.param_count());
    model.for_each_param(&mut |_, g| analytic.push(*g));

    let eval = |m: &mut CodecModel, r: &mut ChaCha20Rng| -> Result<f64, CodecError> {
        Ok(loss_total(&forward_loss(m, sample, w, &mode, r)?, w))
    };

    let n_params = analytic.len();
    let mut pick_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut probes = Vec::with_capacity(n_probes);
    let mut skipped = 0;
    let h = 1e-4;
    // A central difference of a loss of magnitude |f| carries ~ε·|f|/h of
    // cancellation noise. Below 4096× that level the noise alone exceeds a
    // quarter of the tolerance, so such derivatives cannot be certified
    // either way and are rejected like kink crossings.
    let base = eval(model, &mut dummy_rng)?;
    let noise_floor = 4096.0 * f64::EPSILON * base.abs().max(1.0) / h;
    for _ in 0..max_candidates {
        if probes.len() >= n_probes {
            break;
        }
        let index = pick_rng.random_range(0..n_params);
        let saved = read_param(model, index);
        let mut fd_at = |step: f64| -> Result<f64, CodecError> {
            write_param(model, index, saved + step);
            let up = eval(model, &mut dummy_rng)?;
            write_param(model, index, saved - step);
            let down = eval(model, &mut dummy_rng)?;
            write_param(model, index, saved);
            Ok((up - down) / (2.0 * step))
        };
        let fd1 = fd_at(h)?;
        let fd2 = fd_at(h / 2.0)?;
        let agreement = (fd1 - fd2).abs() / fd1.abs().max(fd2.abs()).max(1e-6);
        if agreement > 1e-3 || fd1.abs().max(fd2.abs()) < noise_floor {
            skipped += 1;
            continue;
        }
        // Richardson extrapolation of the two step sizes cancels the O(h²)
        // truncation term, leaving the converged estimate.
        let numeric = (4.0 * fd2 - fd1) / 3.0;
        let a = analytic[index];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        probes.push(Probe {
            index,
            analytic: a,
            numeric,
            rel_err,
        });
    }

    let max_rel_err = probes.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        skipped,
        max_rel_err,
    })
}
