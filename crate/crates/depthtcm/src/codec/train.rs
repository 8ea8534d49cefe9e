//! Loss evaluation and optimization for the learned codec.
//!
//! One training pass runs: fringe image → analysis → hyperprior →
//! Gaussian rate terms on noise-perturbed latents → synthesis of the
//! rounded latent → differentiable fringe decode → distortion losses on
//! normalized depth. Quantization appears through two proxies: additive
//! uniform noise for the rate terms, and round-forward/identity-backward
//! for the distortion path. A frozen-noise mode replaces the rounding too,
//! making the whole pipeline a fixed smooth function for derivative
//! checks.

use ndarray::{Array2, Array3, Zip};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::depth::DepthMap;
use crate::mwd::{mwd_encode, prescale_depth};
use crate::quant::{dequantize_mwd, quantize_mwd};
use crate::synth::{generate, SynthConfig};

use super::decode_train::{fringe_decode_train, fringe_decode_train_backward};
use super::likelihood::gaussian_interval;
use super::losses::{
    loss_conf_backward, loss_mse_backward, loss_total, loss_tv_backward, LossParts, LossWeights,
    PIXEL_SCALE,
};
use super::model::CodecModel;
use super::nn::{crop, crop_adjoint, pad_to_multiple, Params};
use super::{CodecError, TOTAL_STRIDE};

/// Fringe-image quantization the codec is trained against: the 4-bit
/// design point on all three channels.
pub const DESIGN_BITS: (u8, u8, u8) = (4, 4, 4);

/// One training example: a fringe image with its normalized ground truth.
#[derive(Clone)]
pub struct Sample {
    /// Channels (sin, cos, order), shape `(3, h, w)`, values in [0, 1].
    pub x: Array3<f64>,
    /// Ground-truth working depth divided by the range, shape `(h, w)`.
    pub target: Array2<f64>,
    pub valid: Array2<bool>,
    /// Fringe periods across the depth range, `z_range / period`.
    pub rho: f64,
}

/// Builds a training sample: prescale, fringe-encode, then push the image
/// through the scalar quantizer at `bits` so the codec sees the same
/// signal degradation the baseline pipeline would produce.
pub fn sample_from_map(
    map: &DepthMap,
    period: f64,
    bits: (u8, u8, u8),
) -> Result<Sample, CodecError> {
    let (working, params, _) = prescale_depth(map, period, bits.2)?;
    let img = mwd_encode(&working, &params, bits.2)?;
    let q = quantize_mwd(&img, bits)?;
    let img_q = dequantize_mwd(&q, &params)?;
    let (h, w) = (img_q.height(), img_q.width());
    let mut x = Array3::zeros((3, h, w));
    for i in 0..h {
        for j in 0..w {
            x[[0, i, j]] = img_q.r[[i, j]];
            x[[1, i, j]] = img_q.g[[i, j]];
            x[[2, i, j]] = img_q.b[[i, j]];
        }
    }
    Ok(Sample {
        x,
        target: working.values.mapv(|v| v / params.z_range),
        valid: map.valid.clone(),
        rho: params.z_range / params.period,
    })
}

/// Synthetic corpus of `n` maps at `height`×`width`, seeds counting up
/// from `seed`.
pub fn build_corpus(
    n: usize,
    width: usize,
    height: usize,
    seed: u64,
    period: f64,
    bits: (u8, u8, u8),
) -> Result<Vec<Sample>, CodecError> {
    (0..n)
        .map(|i| {
            let map = generate(&SynthConfig {
                width,
                height,
                seed: seed + i as u64,
                ..SynthConfig::default()
            });
            sample_from_map(&map, period, bits)
        })
        .collect()
}

/// How quantization is stood in for during a pass.
pub enum QuantMode<'a> {
    /// Training: fresh uniform noise on the rate path, round-forward /
    /// identity-backward on the distortion path.
    Ste,
    /// Derivative checking: the given noise is added everywhere rounding
    /// would happen, so repeated passes evaluate one smooth function.
    Frozen {
        u_y: &'a Array3<f64>,
        u_z: &'a Array3<f64>,
    },
}

fn run_sample(
    model: &mut CodecModel,
    sample: &Sample,
    w: &LossWeights,
    mode: &QuantMode,
    rng: &mut ChaCha20Rng,
    backward: Option<f64>,
) -> Result<LossParts, CodecError> {
    let (_, h, w_px) = sample.x.dim();
    let x_pad = pad_to_multiple(&sample.x, TOTAL_STRIDE);
    let (_, ph, pw) = x_pad.dim();
    // Rate is normalized by the padded pixel count — the area the latent
    // actually covers. Training crops are multiples of 16, so the two
    // counts agree there.
    let pixel_norm = (ph * pw) as f64;
    let train = backward.is_some();

    let y = model.analysis_forward(&x_pad, train);
    let y_hw = (y.dim().1, y.dim().2);
    let z = model.hyper_analysis_forward(&y, train);

    let (u_y, u_z): (Array3<f64>, Array3<f64>) = match mode {
        QuantMode::Ste => (
            Array3::from_shape_fn(y.dim(), |_| rng.random_range(-0.5..0.5)),
            Array3::from_shape_fn(z.dim(), |_| rng.random_range(-0.5..0.5)),
        ),
        QuantMode::Frozen { u_y, u_z } => {
            assert_eq!(u_y.dim(), y.dim(), "frozen y-noise shape");
            assert_eq!(u_z.dim(), z.dim(), "frozen z-noise shape");
            ((*u_y).clone(), (*u_z).clone())
        }
    };

    let z_tilde = &z + &u_z;
    let (mu, sigma) = model.hyper_synthesis_forward(&z_tilde, y_hw, train);
    let y_tilde = &y + &u_y;

    let ln2 = std::f64::consts::LN_2;
    let mut bits = 0.0;
    let mut dy_rate = Array3::zeros(y.dim());
    let mut dmu = Array3::zeros(y.dim());
    let mut dsigma = Array3::zeros(y.dim());
    {
        let (c, hh, ww) = y_tilde.dim();
        for ci in 0..c {
            for i in 0..hh {
                for j in 0..ww {
                    let l = gaussian_interval(
                        y_tilde[[ci, i, j]],
                        mu[[ci, i, j]],
                        sigma[[ci, i, j]],
                    );
                    bits -= l.p.log2();
                    if let Some(scale) = backward {
                        let dldp = -scale / (l.p * ln2 * pixel_norm);
                        dy_rate[[ci, i, j]] = dldp * l.dp_dv;
                        dmu[[ci, i, j]] = dldp * l.dp_dmu;
                        dsigma[[ci, i, j]] = dldp * l.dp_dsigma;
                    }
                }
            }
        }
    }

    let prior_sigma = model.prior_sigma();
    let prior_factor = model.prior_sigma_grad_factor();
    let mut dz_rate = Array3::zeros(z.dim());
    {
        let (c, hh, ww) = z_tilde.dim();
        for ci in 0..c {
            let pm = model.prior_mu[ci];
            let ps = prior_sigma[ci];
            for i in 0..hh {
                for j in 0..ww {
                    let l = gaussian_interval(z_tilde[[ci, i, j]], pm, ps);
                    bits -= l.p.log2();
                    if let Some(scale) = backward {
                        let dldp = -scale / (l.p * ln2 * pixel_norm);
                        dz_rate[[ci, i, j]] = dldp * l.dp_dv;
                        model.g_prior_mu[ci] += dldp * l.dp_dmu;
                        model.g_prior_s[ci] += dldp * l.dp_dsigma * prior_factor[ci];
                    }
                }
            }
        }
    }
    let bpp = bits / pixel_norm;

    let y_hat = match mode {
        QuantMode::Ste => y.mapv(f64::round),
        QuantMode::Frozen { .. } => y_tilde.clone(),
    };
    let x_hat_pad = model.synthesis_forward(&y_hat, train);
    let x_hat = crop(&x_hat_pad, h, w_px);
    let (z_norm, decode_cache) = fringe_decode_train(&x_hat, sample.rho);

    let (mse, gmse) = loss_mse_backward(&z_norm, &sample.target, &sample.valid)?;
    let (conf, gconf, _) = loss_conf_backward(&z_norm, &sample.target, &sample.valid, w.tau)?;
    let (tv, gtv) = loss_tv_backward(&z_norm);
    let parts = LossParts { mse, bpp, conf, tv };
    let total = loss_total(&parts, w);
    if !total.is_finite() {
        return Err(CodecError::NonFiniteLoss(total));
    }

    if let Some(scale) = backward {
        let mut dz_norm = Array2::zeros(z_norm.dim());
        Zip::from(&mut dz_norm)
            .and(&gmse)
            .and(&gconf)
            .and(&gtv)
            .for_each(|d, &a, &b, &c| {
                *d = scale * (w.lambda * PIXEL_SCALE * a + b + w.w_tv * c);
            });
        let dx_hat = fringe_decode_train_backward(&decode_cache, &dz_norm);
        let dx_pad = crop_adjoint(&dx_hat, ph, pw);
        // Rounding is identity in the backward pass, so the distortion
        // gradient flows straight onto y.
        let dy_dist = model.synthesis_backward(&dx_pad);
        let gz = model.hyper_synthesis_backward(&dmu, &dsigma) + dz_rate;
        let dy_hyper = model.hyper_analysis_backward(&gz);
        let dy = dy_dist + dy_rate + dy_hyper;
        model.analysis_backward(&dy);
    }
    Ok(parts)
}

/// Evaluates the loss without touching gradients.
pub fn forward_loss(
    model: &mut CodecModel,
    sample: &Sample,
    w: &LossWeights,
    mode: &QuantMode,
    rng: &mut ChaCha20Rng,
) -> Result<LossParts, CodecError> {
    run_sample(model, sample, w, mode, rng, None)
}

/// Evaluates the loss and accumulates parameter gradients, scaled by
/// `grad_scale` (callers batching over B samples pass 1/B).
pub fn forward_backward(
    model: &mut CodecModel,
    sample: &Sample,
    w: &LossWeights,
    mode: &QuantMode,
    rng: &mut ChaCha20Rng,
    grad_scale: f64,
) -> Result<LossParts, CodecError> {
    run_sample(model, sample, w, mode, rng, Some(grad_scale))
}

/// Adam with bias correction over the model's flat parameter order.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients. If any gradient
    /// is non-finite the step is skipped entirely and this returns false.
    pub fn step(&mut self, model: &mut CodecModel) -> bool {
        let mut finite = true;
        model.for_each_param(&mut |_, g| finite &= g.is_finite());
        if !finite {
            return false;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.for_each_param(&mut |p, g| {
            m[i] = b1 * m[i] + (1.0 - b1) * *g;
            v[i] = b2 * v[i] + (1.0 - b2) * *g * *g;
            *p -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            i += 1;
        });
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStats {
    pub total: f64,
    pub parts: LossParts,
    /// False when the optimizer skipped the step over a non-finite
    /// gradient.
    pub applied: bool,
}

/// One optimizer step over a batch: zero grads, accumulate each sample at
/// weight 1/B, then apply Adam.
pub fn train_step(
    model: &mut CodecModel,
    batch: &[Sample],
    w: &LossWeights,
    opt: &mut Adam,
    rng: &mut ChaCha20Rng,
) -> Result<TrainStats, CodecError> {
    assert!(!batch.is_empty(), "empty batch");
    model.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut acc = LossParts::default();
    for sample in batch {
        let parts = forward_backward(model, sample, w, &QuantMode::Ste, rng, scale)?;
        acc.mse += scale * parts.mse;
        acc.bpp += scale * parts.bpp;
        acc.conf += scale * parts.conf;
        acc.tv += scale * parts.tv;
    }
    let total = loss_total(&acc, w);
    let applied = opt.step(model);
    Ok(TrainStats {
        total,
        parts: acc,
        applied,
    })
}

/// Runs `steps` optimizer steps over random batches from the corpus.
pub fn run_training(
    model: &mut CodecModel,
    corpus: &[Sample],
    steps: usize,
    batch_size: usize,
    w: &LossWeights,
    opt: &mut Adam,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<TrainStats>, CodecError> {
    assert!(!corpus.is_empty(), "empty corpus");
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch: Vec<Sample> = (0..batch_size)
            .map(|_| corpus[rng.random_range(0..corpus.len())].clone())
            .collect();
        out.push(train_step(model, &batch, w, opt, rng)?);
    }
    Ok(out)
}

/// Exponential moving average with smoothing factor `beta`; the first
/// element seeds the average.
pub fn ema_smooth(values: &[f64], beta: f64) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            acc = if i == 0 { v } else { beta * acc + (1.0 - beta) * v };
            acc
        })
        .collect()
}
