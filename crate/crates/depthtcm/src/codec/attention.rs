//! Single-head self-attention over non-overlapping square windows.
//!
//! The feature map is tiled into `w×w` windows; tokens attend only within
//! their window, which keeps cost linear in image area. When the nominal
//! window does not divide the feature dimensions (tiny feature maps from
//! small inputs), the largest common divisor up to the nominal size is
//! used instead, down to 1×1 windows where attention degenerates to a
//! per-pixel linear map.

use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use super::nn::Params;

#[derive(Clone)]
pub struct WindowAttention {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
    pub gwq: Array2<f64>,
    pub gwk: Array2<f64>,
    pub gwv: Array2<f64>,
    pub gwo: Array2<f64>,
    pub gbq: Array1<f64>,
    pub gbk: Array1<f64>,
    pub gbv: Array1<f64>,
    pub gbo: Array1<f64>,
    pub window: usize,
    cache: Option<Cache>,
}

#[derive(Clone)]
struct Cache {
    h: usize,
    w: usize,
    weff: usize,
    /// Per window: token matrix x, projections q/k/v, attention a, and the
    /// attended values av — everything backward needs.
    windows: Vec<WindowCache>,
}

#[derive(Clone)]
struct WindowCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    av: Array2<f64>,
}

/// Largest window size ≤ `nominal` dividing both dimensions; 1 always does.
fn effective_window(nominal: usize, h: usize, w: usize) -> usize {
    (1..=nominal.max(1))
        .rev()
        .find(|s| h.is_multiple_of(*s) && w.is_multiple_of(*s))
        .unwrap_or(1)
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl WindowAttention {
    pub fn new(channels: usize, window: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut mat = || Array2::from_shape_fn((channels, channels), |_| rng.random_range(-bound..bound));
        let wq = mat();
        let wk = mat();
        let wv = mat();
        let wo = mat();
        WindowAttention {
            gwq: Array2::zeros(wq.dim()),
            gwk: Array2::zeros(wk.dim()),
            gwv: Array2::zeros(wv.dim()),
            gwo: Array2::zeros(wo.dim()),
            wq,
            wk,
            wv,
            wo,
            bq: Array1::zeros(channels),
            bk: Array1::zeros(channels),
            bv: Array1::zeros(channels),
            bo: Array1::zeros(channels),
            gbq: Array1::zeros(channels),
            gbk: Array1::zeros(channels),
            gbv: Array1::zeros(channels),
            gbo: Array1::zeros(channels),
            window,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let weff = effective_window(self.window, h, w);
        let n = weff * weff;
        let scale = 1.0 / (c as f64).sqrt();
        let mut y = Array3::zeros((c, h, w));
        let mut windows = Vec::new();
        for wy in (0..h).step_by(weff) {
            for wx in (0..w).step_by(weff) {
                // Tokens are window pixels in row-major order, one row per
                // token, channels along columns.
                let xt = Array2::from_shape_fn((n, c), |(t, ci)| {
                    x[[ci, wy + t / weff, wx + t % weff]]
                });
                let q = xt.dot(&self.wq.t()) + &self.bq;
                let k = xt.dot(&self.wk.t()) + &self.bk;
                let v = xt.dot(&self.wv.t()) + &self.bv;
                let scores = q.dot(&k.t()) * scale;
                let a = softmax_rows(&scores);
                let av = a.dot(&v);
                let yt = av.dot(&self.wo.t()) + &self.bo;
                for t in 0..n {
                    for ci in 0..c {
                        y[[ci, wy + t / weff, wx + t % weff]] = yt[[t, ci]];
                    }
                }
                if train {
                    windows.push(WindowCache { x: xt, q, k, v, a, av });
                }
            }
        }
        if train {
            self.cache = Some(Cache { h, w, weff, windows });
        }
        y
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.as_ref().expect("attention backward without forward");
        let (c, h, w) = gy.dim();
        assert_eq!((h, w), (cache.h, cache.w));
        let weff = cache.weff;
        let n = weff * weff;
        let scale = 1.0 / (c as f64).sqrt();
        let mut gx = Array3::zeros((c, h, w));
        let mut widx = 0;
        for wy in (0..h).step_by(weff) {
            for wx in (0..w).step_by(weff) {
                let wc = &cache.windows[widx];
                widx += 1;
                let gyt = Array2::from_shape_fn((n, c), |(t, ci)| {
                    gy[[ci, wy + t / weff, wx + t % weff]]
                });
                // Output projection: yt = av·woᵀ + bo.
                self.gwo += &gyt.t().dot(&wc.av);
                self.gbo += &gyt.sum_axis(ndarray::Axis(0));
                let gav = gyt.dot(&self.wo);
                // av = a·v.
                let ga = gav.dot(&wc.v.t());
                let gv = wc.a.t().dot(&gav);
                // Softmax rows: ds = a ⊙ (da − rowsum(da ⊙ a)).
                let mut gscores = Array2::zeros((n, n));
                for t in 0..n {
                    let mut dot = 0.0;
                    for u in 0..n {
                        dot += ga[[t, u]] * wc.a[[t, u]];
                    }
                    for u in 0..n {
                        gscores[[t, u]] = wc.a[[t, u]] * (ga[[t, u]] - dot);
                    }
                }
                // scores = q·kᵀ·scale.
                let gq = gscores.dot(&wc.k) * scale;
                let gk = gscores.t().dot(&wc.q) * scale;
                // Projections: q = x·wqᵀ + bq (likewise k, v).
                self.gwq += &gq.t().dot(&wc.x);
                self.gwk += &gk.t().dot(&wc.x);
                self.gwv += &gv.t().dot(&wc.x);
                self.gbq += &gq.sum_axis(ndarray::Axis(0));
                self.gbk += &gk.sum_axis(ndarray::Axis(0));
                self.gbv += &gv.sum_axis(ndarray::Axis(0));
                let gxt = gq.dot(&self.wq) + gk.dot(&self.wk) + gv.dot(&self.wv);
                for t in 0..n {
                    for ci in 0..c {
                        gx[[ci, wy + t / weff, wx + t % weff]] += gxt[[t, ci]];
                    }
                }
            }
        }
        gx
    }

    /// Attention matrices cached by the last `forward(.., train = true)`,
    /// one row-stochastic matrix per window.
    pub fn cached_attention(&self) -> Option<Vec<&Array2<f64>>> {
        self.cache
            .as_ref()
            .map(|c| c.windows.iter().map(|w| &w.a).collect())
    }
}

impl Params for WindowAttention {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut f64, &mut f64)) {
        for (p, g) in self.wq.iter_mut().zip(self.gwq.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.bq.iter_mut().zip(self.gbq.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.wk.iter_mut().zip(self.gwk.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.bk.iter_mut().zip(self.gbk.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.wv.iter_mut().zip(self.gwv.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.bv.iter_mut().zip(self.gbv.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.wo.iter_mut().zip(self.gwo.iter_mut()) {
            f(p, g);
        }
        for (p, g) in self.bo.iter_mut().zip(self.gbo.iter_mut()) {
            f(p, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(n: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(n)
    }

    #[test]
    fn window_size_falls_back_to_common_divisors()
    {
        assert_eq!(effective_window(4, 32, 32), 4);
        assert_eq!(effective_window(4, 2, 2), 2);
        assert_eq!(effective_window(4, 1, 1), 1);
        assert_eq!(effective_window(4, 6, 4), 2);
        assert_eq!(effective_window(4, 3, 5), 1);
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = seeded(1);
        for c in [8usize, 16] {
            let mut attn = WindowAttention::new(c, 4, &mut rng);
            let x = Array3::from_shape_fn((c, 8, 8), |_| rng.random_range(-1.0..1.0));
            assert_eq!(attn.forward(&x, false).dim(), (c, 8, 8));
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = seeded(2);
        let mut attn = WindowAttention::new(8, 4, &mut rng);
        let x = Array3::from_shape_fn((8, 8, 8), |_| rng.random_range(-2.0..2.0));
        attn.forward(&x, true);
        let mats = attn.cached_attention().unwrap();
        assert_eq!(mats.len(), 4);
        for a in mats {
            for row in a.rows() {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn zero_projections_give_zero_output() {
        let mut rng = seeded(3);
        let mut attn = WindowAttention::new(4, 4, &mut rng);
        attn.wo.fill(0.0);
        attn.bo.fill(0.0);
        let x = Array3::from_shape_fn((4, 4, 4), |_| rng.random_range(-1.0..1.0));
        let y = attn.forward(&x, false);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    fn nudge_param(attn: &mut WindowAttention, target: usize, delta: f64) {
        let mut i = 0;
        attn.for_each_param(&mut |p, _| {
            if i == target {
                *p += delta;
            }
            i += 1;
        });
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(4);
        let mut attn = WindowAttention::new(4, 2, &mut rng);
        let x = Array3::from_shape_fn((4, 4, 4), |_| rng.random_range(-1.0..1.0));
        let coef = Array3::from_shape_fn((4, 4, 4), |_| rng.random_range(-1.0..1.0));

        attn.zero_grads();
        attn.forward(&x, true);
        let gx = attn.backward(&coef);
        let mut grads = Vec::new();
        attn.for_each_param(&mut |_, g| grads.push(*g));

        let check = |analytic: f64, numeric: f64, what: &str| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= 1e-6,
                "{what}: {analytic} vs {numeric}"
            );
        };

        // Probe parameters spread across all four projections and their
        // biases (each projection block is 16 weights + 4 biases).
        let n = attn.param_count();
        let h = 1e-6;
        for target in [0usize, 9, 17, 23, 30, 41, 55, 62, 70, n - 1] {
            nudge_param(&mut attn, target, h);
            let up = (&attn.forward(&x, false) * &coef).sum();
            nudge_param(&mut attn, target, -2.0 * h);
            let down = (&attn.forward(&x, false) * &coef).sum();
            nudge_param(&mut attn, target, h);
            check(grads[target], (up - down) / (2.0 * h), &format!("param {target}"));
        }

        // Input gradient via a perturbed copy.
        let mut x2 = x.clone();
        for idx in [(0usize, 0usize, 0usize), (3, 3, 3), (1, 2, 0)] {
            let saved = x2[idx];
            x2[idx] = saved + h;
            let up = (&attn.forward(&x2, false) * &coef).sum();
            x2[idx] = saved - h;
            let down = (&attn.forward(&x2, false) * &coef).sum();
            x2[idx] = saved;
            check(gx[idx], (up - down) / (2.0 * h), "dX");
        }
    }

    #[test]
    fn single_pixel_windows_behave_like_a_linear_map() {
        // On a 1×1 feature map the softmax is over one token, so attention
        // reduces to wo·(wv·x + bv) + bo.
        let mut rng = seeded(5);
        let mut attn = WindowAttention::new(3, 4, &mut rng);
        let x = Array3::from_shape_fn((3, 1, 1), |_| rng.random_range(-1.0..1.0));
        let y = attn.forward(&x, false);
        let xv = ndarray::Array1::from_iter(x.iter().cloned());
        let expect = attn.wo.dot(&(attn.wv.dot(&xv) + &attn.bv)) + &attn.bo;
        for i in 0..3 {
            assert!((y[[i, 0, 0]] - expect[i]).abs() < 1e-12);
        }
    }
}
