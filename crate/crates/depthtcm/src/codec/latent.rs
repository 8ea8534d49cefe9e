//! Entropy coding of the rounded latents under the hyperprior model.
//!
//! Each latent element gets an integer lattice spanning ±12 predicted
//! standard deviations around its predicted mean (edge bins absorb the
//! tails, and values are clamped into the lattice before coding, so every
//! outcome remains encodable). The hyper-latent is coded first under the
//! per-channel trainable prior; the decoder then reproduces the exact
//! `(mu, sigma)` grid the encoder used and decodes the main latent.

use ndarray::Array3;

use crate::entropy::{CdfTable, RangeDecoder, RangeEncoder, PRECISION_BITS};

use super::likelihood::std_normal_cdf;
use super::model::CodecModel;
use super::CodecError;

/// Half-width cap keeping any alphabet within the coder's 16-bit totals
/// (2·30000 + 1 symbols at most).
const MAX_HALF_WIDTH: i64 = 30_000;

struct Lattice {
    lo: i64,
    table: CdfTable,
}

impl Lattice {
    fn for_gaussian(mu: f64, sigma: f64) -> Result<Self, CodecError> {
        let center = mu.round().clamp(-1e15, 1e15) as i64;
        let lo = ((mu - 12.0 * sigma).floor().clamp(-1e15, 1e15) as i64)
            .max(center - MAX_HALF_WIDTH);
        let hi = ((mu + 12.0 * sigma).ceil().clamp(-1e15, 1e15) as i64)
            .min(center + MAX_HALF_WIDTH)
            .max(lo);
        let n = (hi - lo + 1) as usize;
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let s = (lo + i as i64) as f64;
            let c_lo = if i == 0 {
                0.0
            } else {
                std_normal_cdf((s - 0.5 - mu) / sigma)
            };
            let c_hi = if i == n - 1 {
                1.0
            } else {
                std_normal_cdf((s + 0.5 - mu) / sigma)
            };
            probs.push((c_hi - c_lo).max(0.0));
        }
        Ok(Lattice {
            lo,
            table: CdfTable::from_probabilities(&probs, PRECISION_BITS)?,
        })
    }

    /// Rounds into the lattice and returns (symbol, reconstructed value).
    fn quantize(&self, v: f64) -> (usize, f64) {
        let hi = self.lo + self.table.alphabet_len() as i64 - 1;
        let q = (v.round().clamp(-1e15, 1e15) as i64).clamp(self.lo, hi);
        ((q - self.lo) as usize, q as f64)
    }

    fn value(&self, symbol: usize) -> f64 {
        (self.lo + symbol as i64) as f64
    }
}

/// Entropy-coded latents plus the exact reconstructions the decoder will
/// recover, and the codelength the coding tables predict.
pub struct CodedLatents {
    pub bytes: Vec<u8>,
    pub y_hat: Array3<f64>,
    pub z_hat: Array3<f64>,
    /// Sum of -log2 p over all coded symbols under the quantized tables.
    pub estimated_bits: f64,
}

fn prior_lattices(model: &CodecModel) -> Result<Vec<Lattice>, CodecError> {
    let sigma = model.prior_sigma();
    (0..model.cfg.c_z)
        .map(|c| Lattice::for_gaussian(model.prior_mu[c], sigma[c]))
        .collect()
}

/// Rounds, clamps, and range-codes `z` then `y` in channel-major scan
/// order. `y` and `z` are the raw (un-noised) transform outputs.
pub fn encode_latents(
    model: &mut CodecModel,
    y: &Array3<f64>,
    z: &Array3<f64>,
) -> Result<CodedLatents, CodecError> {
    let y_hw = (y.dim().1, y.dim().2);
    let mut enc = RangeEncoder::new();
    let mut estimated_bits = 0.0;

    let priors = prior_lattices(model)?;
    let mut z_hat = Array3::zeros(z.dim());
    let (zc, zh, zw) = z.dim();
    for c in 0..zc {
        let lat = &priors[c];
        for i in 0..zh {
            for j in 0..zw {
                let (sym, q) = lat.quantize(z[[c, i, j]]);
                z_hat[[c, i, j]] = q;
                estimated_bits -= lat.table.probability(sym)?.log2();
                enc.encode_symbol(sym, &lat.table)?;
            }
        }
    }

    let (mu, sigma) = model.hyper_synthesis_forward(&z_hat, y_hw, false);
    let mut y_hat = Array3::zeros(y.dim());
    let (yc, yh, yw) = y.dim();
    for c in 0..yc {
        for i in 0..yh {
            for j in 0..yw {
                let lat = Lattice::for_gaussian(mu[[c, i, j]], sigma[[c, i, j]])?;
                let (sym, q) = lat.quantize(y[[c, i, j]]);
                y_hat[[c, i, j]] = q;
                estimated_bits -= lat.table.probability(sym)?.log2();
                enc.encode_symbol(sym, &lat.table)?;
            }
        }
    }

    Ok(CodedLatents {
        bytes: enc.finish(),
        y_hat,
        z_hat,
        estimated_bits,
    })
}

/// Inverse of [`encode_latents`]: recovers `(y_hat, z_hat)` bit-exactly
/// given the same model and latent grid shapes.
pub fn decode_latents(
    model: &mut CodecModel,
    y_dim: (usize, usize, usize),
    z_dim: (usize, usize, usize),
    bytes: &[u8],
) -> Result<(Array3<f64>, Array3<f64>), CodecError> {
    let mut dec = RangeDecoder::new(bytes)?;

    let priors = prior_lattices(model)?;
    let mut z_hat = Array3::zeros(z_dim);
    for c in 0..z_dim.0 {
        let lat = &priors[c];
        for i in 0..z_dim.1 {
            for j in 0..z_dim.2 {
                let sym = dec.decode_symbol(&lat.table)?;
                z_hat[[c, i, j]] = lat.value(sym);
            }
        }
    }

    let (mu, sigma) = model.hyper_synthesis_forward(&z_hat, (y_dim.1, y_dim.2), false);
    let mut y_hat = Array3::zeros(y_dim);
    for c in 0..y_dim.0 {
        for i in 0..y_dim.1 {
            for j in 0..y_dim.2 {
                let lat = Lattice::for_gaussian(mu[[c, i, j]], sigma[[c, i, j]])?;
                let sym = dec.decode_symbol(&lat.table)?;
                y_hat[[c, i, j]] = lat.value(sym);
            }
        }
    }
    Ok((y_hat, z_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::model::CodecConfig;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn tiny_model(seed: u64) -> CodecModel {
        let cfg = CodecConfig {
            c_mid: 4,
            c_y: 4,
            c_z: 4,
            window: 2,
        };
        CodecModel::new(cfg, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_latents(
        y_dim: (usize, usize, usize),
        z_dim: (usize, usize, usize),
        spread: f64,
        seed: u64,
    ) -> (Array3<f64>, Array3<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let y = Array3::from_shape_fn(y_dim, |_| rng.random_range(-spread..spread));
        let z = Array3::from_shape_fn(z_dim, |_| rng.random_range(-spread..spread));
        (y, z)
    }

    #[test]
    fn round_trip_recovers_the_encoder_reconstruction_bitwise() {
        let mut model = tiny_model(1);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        // The fresh model's z-prior is unit-scale around zero, so ±4
        // hyper-latents sit far inside their ±12σ lattice and quantize to
        // a plain round.
        let z = Array3::from_shape_fn((4, 1, 2), |_| rng.random_range(-4.0..4.0));
        let z_hat = z.mapv(f64::round);
        // Build the main latents within half a bin of their predicted
        // means: every lattice contains its mean's neighbors, so none of
        // these can clamp, whatever scales the model predicts.
        let (mu, _) = model.hyper_synthesis_forward(&z_hat, (3, 5), false);
        let y = Array3::from_shape_fn((4, 3, 5), |idx| {
            mu[idx] + rng.random_range(-0.45..0.45)
        });
        let coded = encode_latents(&mut model, &y, &z).unwrap();
        assert_eq!(coded.z_hat, z_hat);
        let (y_back, z_back) =
            decode_latents(&mut model, (4, 3, 5), (4, 1, 2), &coded.bytes).unwrap();
        assert_eq!(y_back, coded.y_hat);
        assert_eq!(z_back, coded.z_hat);
        // Reconstructions are integers within rounding distance of the
        // inputs.
        for (a, b) in y.iter().zip(coded.y_hat.iter()) {
            assert_eq!(*b, b.round());
            assert!((a - b).abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn actual_bytes_track_the_table_estimate() {
        let mut model = tiny_model(3);
        let (y, z) = random_latents((4, 8, 8), (4, 2, 2), 3.0, 4);
        let coded = encode_latents(&mut model, &y, &z).unwrap();
        let actual_bits = 8.0 * coded.bytes.len() as f64;
        assert!(
            actual_bits <= coded.estimated_bits * 1.001 + 64.0,
            "actual {actual_bits} vs estimate {}",
            coded.estimated_bits
        );
        assert!(
            actual_bits >= coded.estimated_bits - 16.0,
            "actual {actual_bits} below estimate {}",
            coded.estimated_bits
        );
    }

    #[test]
    fn outliers_clamp_to_the_lattice_and_still_round_trip() {
        let mut model = tiny_model(5);
        let (mut y, z) = random_latents((4, 2, 2), (4, 1, 1), 2.0, 6);
        y[[0, 0, 0]] = 1e9;
        y[[1, 1, 1]] = -1e9;
        let coded = encode_latents(&mut model, &y, &z).unwrap();
        let (y_back, _) = decode_latents(&mut model, (4, 2, 2), (4, 1, 1), &coded.bytes).unwrap();
        assert_eq!(y_back, coded.y_hat);
        assert!(coded.y_hat[[0, 0, 0]] < 1e9);
        assert!(coded.y_hat[[1, 1, 1]] > -1e9);
    }

    #[test]
    fn near_deterministic_prior_still_codes() {
        let mut model = tiny_model(7);
        // Push one prior channel toward a tiny scale; softplus(-30) is
        // ~1e-13, leaving essentially only the floor.
        model.prior_s[0] = -30.0;
        model.prior_mu[0] = 0.25;
        let (y, mut z) = random_latents((4, 1, 1), (4, 1, 1), 1.0, 8);
        z[[0, 0, 0]] = 0.25;
        let coded = encode_latents(&mut model, &y, &z).unwrap();
        let (_, z_back) = decode_latents(&mut model, (4, 1, 1), (4, 1, 1), &coded.bytes).unwrap();
        assert_eq!(z_back, coded.z_hat);
        assert_eq!(coded.z_hat[[0, 0, 0]], 0.0);
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut model = tiny_model(9);
        let (y, z) = random_latents((4, 4, 4), (4, 1, 1), 3.0, 10);
        let a = encode_latents(&mut model, &y, &z).unwrap();
        let b = encode_latents(&mut model, &y, &z).unwrap();
        assert_eq!(a.bytes, b.bytes);
    }

    #[test]
    fn truncated_stream_surfaces_an_error() {
        let mut model = tiny_model(11);
        let (y, z) = random_latents((4, 6, 6), (4, 2, 2), 3.0, 12);
        let coded = encode_latents(&mut model, &y, &z).unwrap();
        let cut = &coded.bytes[..coded.bytes.len().saturating_sub(6)];
        let got = decode_latents(&mut model, (4, 6, 6), (4, 2, 2), cut);
        assert!(got.is_err());
    }
}
