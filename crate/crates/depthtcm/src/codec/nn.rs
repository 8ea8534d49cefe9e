//! Minimal neural-network layers with hand-written backward passes.
//!
//! Everything operates on per-sample `(channels, height, width)` tensors in
//! f64. Layers own their parameters *and* gradient accumulators; `forward`
//! with `train = true` caches what `backward` needs, and `backward`
//! accumulates into the gradient buffers so a batch can be summed one
//! sample at a time. No graph, no tape — call order is the architecture.

use ndarray::{Array1, Array3, Array4};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

/// Negative-side slope of the leaky rectifier used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_relu_grad(pre_activation: f64) -> f64 {
    if pre_activation > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Visits every `(parameter, gradient)` pair in a fixed declaration order.
/// The order is the serialization order of checkpoints and the indexing
/// order of optimizer state, so implementations must be deterministic.
pub trait Params {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut f64, &mut f64));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, _| n += 1);
        n
    }

    fn zero_grads(&mut self) {
        self.for_each_param(&mut |_, g| *g = 0.0);
    }
}

/// Init gain for layers feeding the leaky rectifier: keeps activation
/// variance steady across the layer (Kaiming's `√(2/(1+α²))`).
pub fn gain_rectified() -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
}

/// Init gain for purely linear layers (latent heads, fuse layers):
/// variance-preserving.
pub const GAIN_LINEAR: f64 = 1.0;

/// Init gain for the last layer of a residual branch: keeps the branch a
/// fraction of the trunk signal at start.
pub fn gain_residual_tail() -> f64 {
    1.0 / 3f64.sqrt()
}

/// Uniform init on `±gain·√(3/fan_in)`, i.e. weight variance
/// `gain²/fan_in`, which makes the layer's output variance `gain²·E[x²]`.
/// The gain must be chosen per use site: a stack of layers each shrinking
/// activations by a constant factor decays them geometrically, and this
/// codec's latents must stay on the order of the unit quantization bin or
/// the rounded forward pass degenerates to a constant.
fn init_weight(rng: &mut ChaCha20Rng, fan_in: usize, gain: f64) -> f64 {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    rng.random_range(-bound..bound)
}

/// 2-D convolution with square kernel, zero padding, and square stride.
#[derive(Clone)]
pub struct Conv2d {
    /// Weights indexed `(c_out, c_in, ky, kx)`.
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Array3<f64>>,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = Array4::from_shape_fn((c_out, c_in, kernel, kernel), |_| {
            init_weight(rng, fan_in, gain)
        });
        Conv2d {
            gw: Array4::zeros(w.dim()),
            w,
            b: Array1::zeros(c_out),
            gb: Array1::zeros(c_out),
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (c_out, c_in, k, _) = self.w.dim();
        let (xc, xh, xw) = x.dim();
        assert_eq!(xc, c_in, "conv input channels");
        let (oh, ow) = self.out_hw(xh, xw);
        let mut y = Array3::zeros((c_out, oh, ow));
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.b[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= xh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= xw as isize {
                                    continue;
                                }
                                acc += x[[ci, iy as usize, ix as usize]]
                                    * self.w[[co, ci, ky, kx]];
                            }
                        }
                    }
                    y[[co, oy, ox]] = acc;
                }
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Array3<f64>) -> Array3<f64> {
        let x = self.cache.as_ref().expect("conv backward without forward");
        let (c_out, c_in, k, _) = self.w.dim();
        let (_, xh, xw) = x.dim();
        let (_, oh, ow) = gy.dim();
        let mut gx = Array3::zeros(x.dim());
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gy[[co, oy, ox]];
                    if g == 0.0 {
                        continue;
                    }
                    self.gb[co] += g;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= xh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= xw as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                self.gw[[co, ci, ky, kx]] += g * x[[ci, iy, ix]];
                                gx[[ci, iy, ix]] += g * self.w[[co, ci, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

impl Params for Conv2d {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut f64, &mut f64)) {
        for (p, g) in self.w.iter_mut().zip(self.gw.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.b.iter_mut().zip(self.gb.iter_mut()) {
            f(p, g);
        }
    }
}

/// 2-D transposed convolution (fractionally-strided). With kernel 4,
/// stride 2, pad 1 it exactly doubles spatial dimensions, mirroring the
/// stride-2 convolutions on the analysis side.
#[derive(Clone)]
pub struct ConvTranspose2d {
    /// Weights indexed `(c_in, c_out, ky, kx)`.
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Array3<f64>>,
}

impl ConvTranspose2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        // Each output pixel receives roughly k^2/s^2 taps per input
        // channel; scale like the matching convolution.
        let fan_in = c_in * kernel * kernel / (stride * stride);
        let w = Array4::from_shape_fn((c_in, c_out, kernel, kernel), |_| {
            init_weight(rng, fan_in.max(1), gain)
        });
        ConvTranspose2d {
            gw: Array4::zeros(w.dim()),
            w,
            b: Array1::zeros(c_out),
            gb: Array1::zeros(c_out),
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        (
            (h - 1) * self.stride + k - 2 * self.pad,
            (w - 1) * self.stride + k - 2 * self.pad,
        )
    }

    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (c_in, c_out, k, _) = self.w.dim();
        let (xc, xh, xw) = x.dim();
        assert_eq!(xc, c_in, "transposed conv input channels");
        let (oh, ow) = self.out_hw(xh, xw);
        let mut y = Array3::zeros((c_out, oh, ow));
        for co in 0..c_out {
            y.index_axis_mut(ndarray::Axis(0), co).fill(self.b[co]);
        }
        for ci in 0..c_in {
            for iy in 0..xh {
                for ix in 0..xw {
                    let v = x[[ci, iy, ix]];
                    if v == 0.0 {
                        continue;
                    }
                    for co in 0..c_out {
                        for ky in 0..k {
                            let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * self.stride + kx) as isize - self.pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                y[[co, oy as usize, ox as usize]] +=
                                    v * self.w[[ci, co, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Array3<f64> {
        let x = self
            .cache
            .as_ref()
            .expect("transposed conv backward without forward");
        let (c_in, c_out, k, _) = self.w.dim();
        let (_, xh, xw) = x.dim();
        let (_, oh, ow) = gy.dim();
        for co in 0..c_out {
            self.gb[co] += gy.index_axis(ndarray::Axis(0), co).sum();
        }
        let mut gx = Array3::zeros(x.dim());
        for ci in 0..c_in {
            for iy in 0..xh {
                for ix in 0..xw {
                    let v = x[[ci, iy, ix]];
                    let mut acc = 0.0;
                    for co in 0..c_out {
                        for ky in 0..k {
                            let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * self.stride + kx) as isize - self.pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let g = gy[[co, oy as usize, ox as usize]];
                                self.gw[[ci, co, ky, kx]] += g * v;
                                acc += g * self.w[[ci, co, ky, kx]];
                            }
                        }
                    }
                    gx[[ci, iy, ix]] = acc;
                }
            }
        }
        gx
    }
}

impl Params for ConvTranspose2d {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut f64, &mut f64)) {
        for (p, g) in self.w.iter_mut().zip(self.gw.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.b.iter_mut().zip(self.gb.iter_mut()) {
            f(p, g);
        }
    }
}

/// Replicate-pads a tensor on the bottom/right so both spatial dims become
/// multiples of `multiple`. Returns the tensor unchanged when they already
/// are.
pub fn pad_to_multiple(x: &Array3<f64>, multiple: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if ph == h && pw == w {
        return x.clone();
    }
    Array3::from_shape_fn((c, ph, pw), |(ci, y, xx)| {
        x[[ci, y.min(h - 1), xx.min(w - 1)]]
    })
}

/// Top-left crop — the inverse of [`pad_to_multiple`] for the valid region.
pub fn crop(x: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (c, xh, xw) = x.dim();
    assert!(h <= xh && w <= xw, "crop larger than tensor");
    Array3::from_shape_fn((c, h, w), |(ci, y, xx)| x[[ci, y, xx]])
}

/// Adjoint of [`crop`]: embeds a gradient back into the padded shape with
/// zeros outside the cropped window. (The replicate-padded border receives
/// no gradient; the border pixels it copied already get theirs through the
/// cropped region.)
pub fn crop_adjoint(g: &Array3<f64>, padded_h: usize, padded_w: usize) -> Array3<f64> {
    let (c, h, w) = g.dim();
    let mut out = Array3::zeros((c, padded_h, padded_w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[ci, y, x]] = g[[ci, y, x]];
            }
        }
    }
    out
}
