//! The learned codec: analysis/synthesis transforms plus the hyperprior
//! pair that predicts per-element Gaussian parameters for the latent.
//!
//! Field declaration order is load-bearing: [`Params::for_each_param`]
//! visits layers in that order, and checkpoints serialize parameters as a
//! flat array in visiting order.

use ndarray::{concatenate, s, Array1, Array3, Axis};
use rand_chacha::ChaCha20Rng;

use super::nn::{
    crop, crop_adjoint, gain_rectified, leaky_relu, leaky_relu_grad, sigmoid, softplus, Conv2d,
    ConvTranspose2d, GAIN_LINEAR,
    Params,
};
use super::tcm::TcmBlock;
use super::{CodecError, TOTAL_STRIDE};

/// Floor added to every predicted scale so likelihood intervals never
/// divide by zero.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    /// Channel width of the intermediate analysis/synthesis stages.
    pub c_mid: usize,
    /// Channels of the coded latent `y`.
    pub c_y: usize,
    /// Channels of the hyper-latent `z`.
    pub c_z: usize,
    /// Nominal attention window inside mixture blocks.
    pub window: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            c_mid: 16,
            c_y: 32,
            c_z: 16,
            window: 4,
        }
    }
}

/// Complete parameter set of the learned codec.
///
/// Stacks, in forward order:
/// - analysis `g_a`: Conv(3→mid, k5 s2) → lrelu → TCM → [Conv(k3 s2) →
///   lrelu → TCM] ×2 → Conv(mid→c_y, k3 s2); total stride 16.
/// - synthesis `g_s`: the transposed mirror (k4 s2 each), ending in a
///   3-channel transposed conv and a sigmoid.
/// - hyper-analysis `h_a`: two stride-2 convs, c_y → c_z.
/// - hyper-synthesis `h_s`: two stride-2 transposed convs, c_z → 2·c_y,
///   cropped to the latent grid and split into means and raw scales.
/// - a trainable per-channel Gaussian prior for `z`.
#[derive(Clone)]
pub struct CodecModel {
    pub cfg: CodecConfig,

    ga_c1: Conv2d,
    ga_t1: TcmBlock,
    ga_c2: Conv2d,
    ga_t2: TcmBlock,
    ga_c3: Conv2d,
    ga_t3: TcmBlock,
    ga_c4: Conv2d,

    gs_c1: ConvTranspose2d,
    gs_t1: TcmBlock,
    gs_c2: ConvTranspose2d,
    gs_t2: TcmBlock,
    gs_c3: ConvTranspose2d,
    gs_t3: TcmBlock,
    gs_c4: ConvTranspose2d,

    ha_c1: Conv2d,
    ha_c2: Conv2d,

    hs_c1: ConvTranspose2d,
    hs_c2: ConvTranspose2d,

    /// Per-channel prior mean for `z`.
    pub prior_mu: Array1<f64>,
    /// Per-channel raw prior scale; effective scale is
    /// `softplus(prior_s) + SIGMA_FLOOR`.
    pub prior_s: Array1<f64>,
    pub g_prior_mu: Array1<f64>,
    pub g_prior_s: Array1<f64>,

    // Pre-activation caches for the leaky-relu sites, stored only in
    // training forwards.
    ga_pre: [Option<Array3<f64>>; 3],
    gs_pre: [Option<Array3<f64>>; 3],
    gs_sig: Option<Array3<f64>>,
    ha_pre: Option<Array3<f64>>,
    hs_pre: Option<Array3<f64>>,
    hs_raw_scale: Option<Array3<f64>>,
    hs_precrop_hw: Option<(usize, usize)>,
}

impl CodecModel {
    pub fn new(cfg: CodecConfig, rng: &mut ChaCha20Rng) -> Result<Self, CodecError> {
        let m = cfg.c_mid;
        let relu = gain_rectified();
        let mut model = CodecModel {
            cfg,
            ga_c1: Conv2d::new(3, m, 5, 2, 2, relu, rng),
            ga_t1: TcmBlock::new(m, cfg.window, rng)?,
            ga_c2: Conv2d::new(m, m, 3, 2, 1, relu, rng),
            ga_t2: TcmBlock::new(m, cfg.window, rng)?,
            ga_c3: Conv2d::new(m, m, 3, 2, 1, relu, rng),
            ga_t3: TcmBlock::new(m, cfg.window, rng)?,
            ga_c4: Conv2d::new(m, cfg.c_y, 3, 2, 1, GAIN_LINEAR, rng),

            gs_c1: ConvTranspose2d::new(cfg.c_y, m, 4, 2, 1, relu, rng),
            gs_t1: TcmBlock::new(m, cfg.window, rng)?,
            gs_c2: ConvTranspose2d::new(m, m, 4, 2, 1, relu, rng),
            gs_t2: TcmBlock::new(m, cfg.window, rng)?,
            gs_c3: ConvTranspose2d::new(m, m, 4, 2, 1, relu, rng),
            gs_t3: TcmBlock::new(m, cfg.window, rng)?,
            gs_c4: ConvTranspose2d::new(m, 3, 4, 2, 1, GAIN_LINEAR, rng),

            ha_c1: Conv2d::new(cfg.c_y, cfg.c_z, 3, 2, 1, relu, rng),
            ha_c2: Conv2d::new(cfg.c_z, cfg.c_z, 3, 2, 1, GAIN_LINEAR, rng),

            hs_c1: ConvTranspose2d::new(cfg.c_z, cfg.c_z, 4, 2, 1, relu, rng),
            hs_c2: ConvTranspose2d::new(cfg.c_z, 2 * cfg.c_y, 4, 2, 1, GAIN_LINEAR, rng),

            prior_mu: Array1::zeros(cfg.c_z),
            // softplus(s) + floor == 1.0 at this raw value.
            prior_s: Array1::from_elem(cfg.c_z, (std::f64::consts::E - 1.0).ln()),
            g_prior_mu: Array1::zeros(cfg.c_z),
            g_prior_s: Array1::zeros(cfg.c_z),

            ga_pre: [None, None, None],
            gs_pre: [None, None, None],
            gs_sig: None,
            ha_pre: None,
            hs_pre: None,
            hs_raw_scale: None,
            hs_precrop_hw: None,
        };
        // Start the sine/cosine channels on the fringe circle, away from
        // the phase singularity at (0.5, 0.5), and the order channel
        // mid-range: pre-sigmoid biases (1.5, 1.5, 0.0).
        model.gs_c4.b[0] = 1.5;
        model.gs_c4.b[1] = 1.5;
        model.gs_c4.b[2] = 0.0;
        Ok(model)
    }

    /// Encoder transform. Input `(3, h, w)` with both spatial dims
    /// multiples of [`TOTAL_STRIDE`]; output `(c_y, h/16, w/16)`.
    pub fn analysis_forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (_, h, w) = x.dim();
        assert!(
            h % TOTAL_STRIDE == 0 && w % TOTAL_STRIDE == 0,
            "analysis input {h}x{w} not a multiple of {TOTAL_STRIDE}; pad first"
        );
        let mut t = self.ga_c1.forward(x, train);
        self.ga_pre[0] = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        t = self.ga_t1.forward(&t, train);

        t = self.ga_c2.forward(&t, train);
        self.ga_pre[1] = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        t = self.ga_t2.forward(&t, train);

        t = self.ga_c3.forward(&t, train);
        self.ga_pre[2] = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        t = self.ga_t3.forward(&t, train);

        self.ga_c4.forward(&t, train)
    }

    pub fn analysis_backward(&mut self, gy: &Array3<f64>) -> Array3<f64> {
        let mut g = self.ga_c4.backward(gy);
        g = self.ga_t3.backward(&g);
        g *= &self.ga_pre[2].take().expect("analysis forward first").mapv(leaky_relu_grad);
        g = self.ga_c3.backward(&g);
        g = self.ga_t2.backward(&g);
        g *= &self.ga_pre[1].take().expect("analysis forward first").mapv(leaky_relu_grad);
        g = self.ga_c2.backward(&g);
        g = self.ga_t1.backward(&g);
        g *= &self.ga_pre[0].take().expect("analysis forward first").mapv(leaky_relu_grad);
        self.ga_c1.backward(&g)
    }

    /// Decoder transform. Input `(c_y, yh, yw)`; output `(3, 16·yh, 16·yw)`
    /// with every element in (0, 1).
    pub fn synthesis_forward(&mut self, y: &Array3<f64>, train: bool) -> Array3<f64> {
        let mut t = self.gs_c1.forward(y, train);
        self.gs_pre[0] = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        t = self.gs_t1.forward(&t, train);

        t = self.gs_c2.forward(&t, train);
        self.gs_pre[1] = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        t = self.gs_t2.forward(&t, train);

        t = self.gs_c3.forward(&t, train);
        self.gs_pre[2] = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        t = self.gs_t3.forward(&t, train);

        t = self.gs_c4.forward(&t, train);
        t.mapv_inplace(sigmoid);
        self.gs_sig = train.then(|| t.clone());
        t
    }

    pub fn synthesis_backward(&mut self, gx_hat: &Array3<f64>) -> Array3<f64> {
        let sig = self.gs_sig.take().expect("synthesis forward first");
        let mut g = gx_hat * &sig.mapv(|s| s * (1.0 - s));
        g = self.gs_c4.backward(&g);
        g = self.gs_t3.backward(&g);
        g *= &self.gs_pre[2].take().expect("synthesis forward first").mapv(leaky_relu_grad);
        g = self.gs_c3.backward(&g);
        g = self.gs_t2.backward(&g);
        g *= &self.gs_pre[1].take().expect("synthesis forward first").mapv(leaky_relu_grad);
        g = self.gs_c2.backward(&g);
        g = self.gs_t1.backward(&g);
        g *= &self.gs_pre[0].take().expect("synthesis forward first").mapv(leaky_relu_grad);
        self.gs_c1.backward(&g)
    }

    /// Hyper-encoder: latent `(c_y, yh, yw)` to hyper-latent
    /// `(c_z, ceil(yh/2)/…, …)` at stride [`super::HYPER_STRIDE`] relative to `y`.
    pub fn hyper_analysis_forward(&mut self, y: &Array3<f64>, train: bool) -> Array3<f64> {
        let mut t = self.ha_c1.forward(y, train);
        self.ha_pre = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        self.ha_c2.forward(&t, train)
    }

    pub fn hyper_analysis_backward(&mut self, gz: &Array3<f64>) -> Array3<f64> {
        let mut g = self.ha_c2.backward(gz);
        g *= &self.ha_pre.take().expect("hyper-analysis forward first").mapv(leaky_relu_grad);
        self.ha_c1.backward(&g)
    }

    /// Hyper-decoder: predicts `(mu, sigma)` for every latent element,
    /// each shaped `(c_y, yh, yw)`. `sigma` is softplus-mapped and floored
    /// at [`SIGMA_FLOOR`], so always positive.
    pub fn hyper_synthesis_forward(
        &mut self,
        z_hat: &Array3<f64>,
        y_hw: (usize, usize),
        train: bool,
    ) -> (Array3<f64>, Array3<f64>) {
        let c_y = self.cfg.c_y;
        let mut t = self.hs_c1.forward(z_hat, train);
        self.hs_pre = train.then(|| t.clone());
        t.mapv_inplace(leaky_relu);
        let full = self.hs_c2.forward(&t, train);
        let (_, fh, fw) = full.dim();
        self.hs_precrop_hw = train.then_some((fh, fw));
        let cropped = crop(&full, y_hw.0, y_hw.1);
        let mu = cropped.slice(s![..c_y, .., ..]).to_owned();
        let raw = cropped.slice(s![c_y.., .., ..]).to_owned();
        let sigma = raw.mapv(|v| softplus(v) + SIGMA_FLOOR);
        self.hs_raw_scale = train.then_some(raw);
        (mu, sigma)
    }

    pub fn hyper_synthesis_backward(
        &mut self,
        gmu: &Array3<f64>,
        gsigma: &Array3<f64>,
    ) -> Array3<f64> {
        let raw = self.hs_raw_scale.take().expect("hyper-synthesis forward first");
        // d softplus / d raw is the logistic function.
        let graw = gsigma * &raw.mapv(sigmoid);
        let gcropped = concatenate(Axis(0), &[gmu.view(), graw.view()]).expect("channel concat");
        let (fh, fw) = self.hs_precrop_hw.take().expect("hyper-synthesis forward first");
        let gfull = crop_adjoint(&gcropped, fh, fw);
        let mut g = self.hs_c2.backward(&gfull);
        g *= &self.hs_pre.take().expect("hyper-synthesis forward first").mapv(leaky_relu_grad);
        self.hs_c1.backward(&g)
    }

    /// Latent and hyper-latent shapes for an input of `h`×`w` pixels
    /// (before padding).
    pub fn latent_dims(
        &self,
        h: usize,
        w: usize,
    ) -> ((usize, usize, usize), (usize, usize, usize)) {
        let yh = h.div_ceil(TOTAL_STRIDE);
        let yw = w.div_ceil(TOTAL_STRIDE);
        let (zh1, zw1) = self.ha_c1.out_hw(yh, yw);
        let (zh, zw) = self.ha_c2.out_hw(zh1, zw1);
        ((self.cfg.c_y, yh, yw), (self.cfg.c_z, zh, zw))
    }

    /// Effective per-channel prior scales for the hyper-latent.
    pub fn prior_sigma(&self) -> Array1<f64> {
        self.prior_s.mapv(|s| softplus(s) + SIGMA_FLOOR)
    }

    /// Chain-rule factor from effective prior scale back to the raw
    /// parameter, per channel.
    pub fn prior_sigma_grad_factor(&self) -> Array1<f64> {
        self.prior_s.mapv(sigmoid)
    }
}

impl Params for CodecModel {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut f64, &mut f64)) {
        self.ga_c1.for_each_param(f);
        self.ga_t1.for_each_param(f);
        self.ga_c2.for_each_param(f);
        self.ga_t2.for_each_param(f);
        self.ga_c3.for_each_param(f);
        self.ga_t3.for_each_param(f);
        self.ga_c4.for_each_param(f);

        self.gs_c1.for_each_param(f);
        self.gs_t1.for_each_param(f);
        self.gs_c2.for_each_param(f);
        self.gs_t2.for_each_param(f);
        self.gs_c3.for_each_param(f);
        self.gs_t3.for_each_param(f);
        self.gs_c4.for_each_param(f);

        self.ha_c1.for_each_param(f);
        self.ha_c2.for_each_param(f);

        self.hs_c1.for_each_param(f);
        self.hs_c2.for_each_param(f);

        for (p, g) in self.prior_mu.iter_mut().zip(self.g_prior_mu.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.prior_s.iter_mut().zip(self.g_prior_s.iter_mut()) {
            f(p, g);
        }
    }
}
