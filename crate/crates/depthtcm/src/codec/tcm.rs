//! Convolution/attention mixture block.
//!
//! Channels are split in half: one half runs a residual two-layer
//! convolutional branch (local detail), the other a residual windowed
//! self-attention branch (longer-range structure). The halves are
//! concatenated and fused by a 1×1 convolution. Output shape always equals
//! input shape.

use ndarray::{concatenate, s, Array3, Axis};
use rand_chacha::ChaCha20Rng;

use super::attention::WindowAttention;
use super::nn::{
    gain_rectified, gain_residual_tail, leaky_relu, leaky_relu_grad, Conv2d, Params, GAIN_LINEAR,
};
use super::CodecError;

#[derive(Clone)]
pub struct TcmBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
    pub attn: WindowAttention,
    pub fuse: Conv2d,
    /// Pre-activation output of `c1`, cached for the rectifier gradient.
    pre_act: Option<Array3<f64>>,
}

impl TcmBlock {
    pub fn new(channels: usize, window: usize, rng: &mut ChaCha20Rng) -> Result<Self, CodecError> {
        if !channels.is_multiple_of(2) {
            return Err(CodecError::OddChannels { channels });
        }
        let half = channels / 2;
        Ok(TcmBlock {
            c1: Conv2d::new(half, half, 3, 1, 1, gain_rectified(), rng),
            c2: Conv2d::new(half, half, 3, 1, 1, gain_residual_tail(), rng),
            attn: WindowAttention::new(half, window, rng),
            fuse: Conv2d::new(channels, channels, 1, 1, 0, GAIN_LINEAR, rng),
            pre_act: None,
        })
    }

    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (c, _, _) = x.dim();
        let half = c / 2;
        let xc = x.slice(s![..half, .., ..]).to_owned();
        let xa = x.slice(s![half.., .., ..]).to_owned();

        let t1 = self.c1.forward(&xc, train);
        let a1 = t1.mapv(leaky_relu);
        let t2 = self.c2.forward(&a1, train);
        let hc = &xc + &t2;

        let ha = &xa + &self.attn.forward(&xa, train);

        let cat = concatenate(Axis(0), &[hc.view(), ha.view()]).unwrap();
        let y = self.fuse.forward(&cat, train);
        if train {
            self.pre_act = Some(t1);
        }
        y
    }

    pub fn backward(&mut self, gy: &Array3<f64>) -> Array3<f64> {
        let gcat = self.fuse.backward(gy);
        let (c, _, _) = gcat.dim();
        let half = c / 2;
        let ghc = gcat.slice(s![..half, .., ..]).to_owned();
        let gha = gcat.slice(s![half.., .., ..]).to_owned();

        // Attention branch: ha = xa + attn(xa).
        let gxa = &gha + &self.attn.backward(&gha);

        // Conv branch: hc = xc + c2(lrelu(c1(xc))).
        let ga1 = self.c2.backward(&ghc);
        let pre = self
            .pre_act
            .as_ref()
            .expect("tcm backward without forward");
        let gt1 = &ga1 * &pre.mapv(leaky_relu_grad);
        let gxc = &ghc + &self.c1.backward(&gt1);

        concatenate(Axis(0), &[gxc.view(), gxa.view()]).unwrap()
    }
}

impl Params for TcmBlock {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut f64, &mut f64)) {
        self.c1.for_each_param(f);
        self.c2.for_each_param(f);
        self.attn.for_each_param(f);
        self.fuse.for_each_param(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn seeded(n: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(n)
    }

    #[test]
    fn odd_channel_count_is_rejected() {
        let mut rng = seeded(1);
        assert!(matches!(
            TcmBlock::new(15, 4, &mut rng),
            Err(CodecError::OddChannels { channels: 15 })
        ));
    }

    #[test]
    fn shape_is_preserved() {
        let mut rng = seeded(2);
        for c in [16usize, 32] {
            let mut block = TcmBlock::new(c, 4, &mut rng).unwrap();
            let x = Array3::from_shape_fn((c, 8, 8), |_| rng.random_range(-1.0..1.0));
            assert_eq!(block.forward(&x, false).dim(), (c, 8, 8));
        }
    }

    #[test]
    fn zero_branches_and_identity_fuse_pass_input_through() {
        let mut rng = seeded(3);
        let mut block = TcmBlock::new(8, 4, &mut rng).unwrap();
        block.c1.zero_grads();
        // Zero both branch outputs, make the fuse an identity.
        block.c1.w.fill(0.0);
        block.c1.b.fill(0.0);
        block.c2.w.fill(0.0);
        block.c2.b.fill(0.0);
        block.attn.for_each_param(&mut |p, _| *p = 0.0);
        block.fuse.w.fill(0.0);
        block.fuse.b.fill(0.0);
        for o in 0..8 {
            block.fuse.w[[o, o, 0, 0]] = 1.0;
        }
        let x = Array3::from_shape_fn((8, 4, 4), |_| rng.random_range(-1.0..1.0));
        let y = block.forward(&x, false);
        assert_eq!(y, x);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(4);
        let mut block = TcmBlock::new(8, 2, &mut rng).unwrap();
        let x = Array3::from_shape_fn((8, 4, 4), |_| rng.random_range(-1.0..1.0));
        let coef = Array3::from_shape_fn((8, 4, 4), |_| rng.random_range(-1.0..1.0));

        block.zero_grads();
        block.forward(&x, true);
        let gx = block.backward(&coef);
        let mut grads = Vec::new();
        block.for_each_param(&mut |_, g| grads.push(*g));

        let n = block.param_count();
        let h = 1e-6;
        let nudge = |block: &mut TcmBlock, target: usize, delta: f64| {
            let mut i = 0;
            block.for_each_param(&mut |p, _| {
                if i == target {
                    *p += delta;
                }
                i += 1;
            });
        };
        // Sample parameters across all four sublayers.
        let probes: Vec<usize> = (0..10).map(|i| i * (n - 1) / 9).collect();
        for target in probes {
            nudge(&mut block, target, h);
            let up = (&block.forward(&x, false) * &coef).sum();
            nudge(&mut block, target, -2.0 * h);
            let down = (&block.forward(&x, false) * &coef).sum();
            nudge(&mut block, target, h);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[target];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= 1e-5,
                "param {target}: {analytic} vs {numeric}"
            );
        }

        let mut x2 = x.clone();
        for idx in [(0usize, 0usize, 0usize), (7, 3, 3), (4, 1, 2)] {
            let saved = x2[idx];
            x2[idx] = saved + h;
            let up = (&block.forward(&x2, false) * &coef).sum();
            x2[idx] = saved - h;
            let down = (&block.forward(&x2, false) * &coef).sum();
            x2[idx] = saved;
            let numeric = (up - down) / (2.0 * h);
            let analytic = gx[idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= 1e-5,
                "input {idx:?}: {analytic} vs {numeric}"
            );
        }
    }
}
