//! Uniform and complexity-adaptive quantization of fringe images.
//!
//! Planes are real-valued in `[0, 1]`; codes are integers in `[0, 2^bits−1]`
//! with `q = round(v·(2^bits−1))`, ties away from zero. Dequantization maps
//! codes back to `q/(2^bits−1)` — values stay normalized, any unit scaling
//! happens only at image export.

use crate::mwd::{FringeParams, MwdImage};
use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("bit depth must be in 1..=8, got {0}")]
    BitsOutOfRange(u8),
    #[error("symbol {symbol} out of range for {bits}-bit codes")]
    SymbolOutOfRange { symbol: u8, bits: u8 },
    #[error("patch size must be at least 2, got {0}")]
    PatchTooSmall(u16),
    #[error("bit range inverted: lo {lo} > hi {hi}")]
    BitRangeInverted { lo: u8, hi: u8 },
    #[error("adaptive map shape {map:?} does not match image grid {grid:?}")]
    MapShapeMismatch {
        map: (usize, usize),
        grid: (usize, usize),
    },
    #[error("adaptive map bytes malformed: {0}")]
    MalformedMap(String),
}

fn check_bits(bits: u8) -> Result<(), QuantError> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(QuantError::BitsOutOfRange(bits))
    }
}

#[inline]
fn levels(bits: u8) -> f64 {
    f64::from((1u32 << bits) - 1)
}

#[inline]
fn quantize_value(v: f64, bits: u8) -> u8 {
    (v.clamp(0.0, 1.0) * levels(bits)).round() as u8
}

/// Quantizes one plane; out-of-range inputs are clamped into `[0, 1]` first.
pub fn quantize_plane(plane: &Array2<f64>, bits: u8) -> Result<Array2<u8>, QuantError> {
    check_bits(bits)?;
    Ok(plane.map(|&v| quantize_value(v, bits)))
}

/// Dequantizes one plane of codes back to `[0, 1]`.
pub fn dequantize_plane(codes: &Array2<u8>, bits: u8) -> Result<Array2<f64>, QuantError> {
    check_bits(bits)?;
    let n = levels(bits);
    let max = ((1u32 << bits) - 1) as u8;
    for &q in codes.iter() {
        if q > max {
            return Err(QuantError::SymbolOutOfRange { symbol: q, bits });
        }
    }
    Ok(codes.map(|&q| f64::from(q) / n))
}

/// Quantized fringe image: three code planes with their bit depths.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMwd {
    pub r: Array2<u8>,
    pub g: Array2<u8>,
    pub b: Array2<u8>,
    pub bits_r: u8,
    pub bits_g: u8,
    pub bits_b: u8,
}

impl QuantizedMwd {
    pub fn height(&self) -> usize {
        self.r.dim().0
    }

    pub fn width(&self) -> usize {
        self.r.dim().1
    }
}

/// Quantizes all three channels at fixed per-plane bit depths.
pub fn quantize_mwd(m: &MwdImage, bits: (u8, u8, u8)) -> Result<QuantizedMwd, QuantError> {
    Ok(QuantizedMwd {
        r: quantize_plane(&m.r, bits.0)?,
        g: quantize_plane(&m.g, bits.1)?,
        b: quantize_plane(&m.b, bits.2)?,
        bits_r: bits.0,
        bits_g: bits.1,
        bits_b: bits.2,
    })
}

/// Dequantizes a fixed-depth quantized image back to a fringe image.
pub fn dequantize_mwd(q: &QuantizedMwd, params: &FringeParams) -> Result<MwdImage, QuantError> {
    Ok(MwdImage {
        r: dequantize_plane(&q.r, q.bits_r)?,
        g: dequantize_plane(&q.g, q.bits_g)?,
        b: dequantize_plane(&q.b, q.bits_b)?,
        params: *params,
    })
}

// ── Training proxies ─────────────────────────────────────────────────────────

/// Differentiable stand-ins for hard quantization during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyMode {
    /// Additive uniform noise of one quantization step.
    Noise,
    /// Straight-through estimator: hard `quantize∘dequantize` forward,
    /// identity backward.
    Ste,
}

/// Quantization proxy over `[0, 1]` planes at a given bit depth.
///
/// Both modes have an identity backward pass by construction, which
/// [`QuantProxy::backward`] makes explicit.
#[derive(Debug, Clone, Copy)]
pub struct QuantProxy {
    pub mode: ProxyMode,
    pub bits: u8,
}

impl QuantProxy {
    pub fn new(mode: ProxyMode, bits: u8) -> Result<Self, QuantError> {
        check_bits(bits)?;
        Ok(QuantProxy { mode, bits })
    }

    /// One quantization step at this bit depth.
    pub fn step(&self) -> f64 {
        1.0 / levels(self.bits)
    }

    pub fn forward<R: Rng>(&self, plane: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        match self.mode {
            ProxyMode::Ste => {
                let n = levels(self.bits);
                plane.map(|&v| f64::from(quantize_value(v, self.bits)) / n)
            }
            ProxyMode::Noise => {
                let half = 0.5 * self.step();
                plane.map(|&v| v + rng.random_range(-half..half))
            }
        }
    }

    /// Gradient of the proxy: the identity, in either mode.
    pub fn backward(&self, upstream: &Array2<f64>) -> Array2<f64> {
        upstream.clone()
    }
}

// ── Adaptive quantization ────────────────────────────────────────────────────

/// Per-patch bit allocation decided from coarse-channel complexity.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveQuantMap {
    pub patch: u16,
    pub bit_lo: u8,
    pub bit_hi: u8,
    /// Bit depth per patch, row-major over the patch grid.
    pub bits: Array2<u8>,
}

impl AdaptiveQuantMap {
    /// Bits of packed payload: one `ceil(log2(levels))`-bit code per patch.
    pub fn side_info_bits(&self) -> usize {
        self.bits.len() * usize::from(self.code_width())
    }

    fn code_width(&self) -> u8 {
        let n_levels = u16::from(self.bit_hi - self.bit_lo) + 1;
        if n_levels <= 1 {
            0
        } else {
            (16 - (n_levels - 1).leading_zeros()) as u8
        }
    }

    /// Serializes as `u16 patch | u8 bit_lo | u8 bit_hi | packed codes`,
    /// little-endian, codes packed LSB-first row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.patch.to_le_bytes());
        out.push(self.bit_lo);
        out.push(self.bit_hi);
        let w = u32::from(self.code_width());
        let mut acc: u32 = 0;
        let mut n_acc = 0u32;
        for &b in self.bits.iter() {
            acc |= u32::from(b - self.bit_lo) << n_acc;
            n_acc += w;
            while n_acc >= 8 {
                out.push((acc & 0xff) as u8);
                acc >>= 8;
                n_acc -= 8;
            }
        }
        if n_acc > 0 {
            out.push((acc & 0xff) as u8);
        }
        out
    }

    /// Parses a serialized map for an image of the given dimensions.
    pub fn from_bytes(bytes: &[u8], width: usize, height: usize) -> Result<Self, QuantError> {
        if bytes.len() < 4 {
            return Err(QuantError::MalformedMap("shorter than header".into()));
        }
        let patch = u16::from_le_bytes([bytes[0], bytes[1]]);
        let (bit_lo, bit_hi) = (bytes[2], bytes[3]);
        if patch < 2 {
            return Err(QuantError::PatchTooSmall(patch));
        }
        if bit_lo > bit_hi {
            return Err(QuantError::BitRangeInverted {
                lo: bit_lo,
                hi: bit_hi,
            });
        }
        check_bits(bit_lo)?;
        check_bits(bit_hi)?;
        let grid = patch_grid(width, height, patch);
        let mut map = AdaptiveQuantMap {
            patch,
            bit_lo,
            bit_hi,
            bits: Array2::from_elem(grid, bit_lo),
        };
        let w = u32::from(map.code_width());
        let need = (map.bits.len() * w as usize).div_ceil(8);
        if bytes.len() < 4 + need {
            return Err(QuantError::MalformedMap(format!(
                "payload needs {need} bytes, found {}",
                bytes.len() - 4
            )));
        }
        if w > 0 {
            let payload = &bytes[4..];
            let mut bit_pos = 0usize;
            let n_levels = u32::from(bit_hi - bit_lo) + 1;
            for b in map.bits.iter_mut() {
                let mut code = 0u32;
                for i in 0..w {
                    let p = bit_pos + i as usize;
                    code |= u32::from((payload[p / 8] >> (p % 8)) & 1) << i;
                }
                bit_pos += w as usize;
                if code >= n_levels {
                    return Err(QuantError::MalformedMap(format!(
                        "patch code {code} outside {n_levels} levels"
                    )));
                }
                *b = bit_lo + code as u8;
            }
        }
        Ok(map)
    }
}

fn patch_grid(width: usize, height: usize, patch: u16) -> (usize, usize) {
    let p = patch as usize;
    (height.div_ceil(p), width.div_ceil(p))
}

/// Mean forward-difference gradient magnitude of the coarse channel within
/// each patch (pixels lacking a right or down neighbor do not contribute).
fn patch_complexity(b: &Array2<f64>, patch: u16) -> Array2<f64> {
    let (h, w) = b.dim();
    let grid = patch_grid(w, h, patch);
    let mut sum = Array2::<f64>::zeros(grid);
    let mut count = Array2::<f64>::zeros(grid);
    let p = patch as usize;
    for i in 0..h.saturating_sub(1) {
        for j in 0..w.saturating_sub(1) {
            let dx = b[[i, j + 1]] - b[[i, j]];
            let dy = b[[i + 1, j]] - b[[i, j]];
            let cell = [i / p, j / p];
            sum[cell] += (dx * dx + dy * dy).sqrt();
            count[cell] += 1.0;
        }
    }
    let mut out = sum;
    for (s, c) in out.iter_mut().zip(count.iter()) {
        if *c > 0.0 {
            *s /= c;
        }
    }
    out
}

/// Quantizes with per-patch bit depths chosen by complexity quantile.
///
/// Patches are ranked by complexity (rank = number of strictly smaller
/// patches, so ties share a rank and a constant image maps every patch to
/// `bit_lo`); the normalized rank is binned linearly into `[bit_lo, bit_hi]`.
pub fn adaptive_quantize(
    m: &MwdImage,
    patch: u16,
    bit_lo: u8,
    bit_hi: u8,
) -> Result<(QuantizedMwd, AdaptiveQuantMap), QuantError> {
    if patch < 2 {
        return Err(QuantError::PatchTooSmall(patch));
    }
    check_bits(bit_lo)?;
    check_bits(bit_hi)?;
    if bit_lo > bit_hi {
        return Err(QuantError::BitRangeInverted {
            lo: bit_lo,
            hi: bit_hi,
        });
    }

    let complexity = patch_complexity(&m.b, patch);
    let mut sorted: Vec<f64> = complexity.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let span = f64::from(bit_hi - bit_lo);
    let bits = complexity.map(|&c| {
        let rank = sorted.partition_point(|&s| s < c);
        let q = if n > 1 {
            rank as f64 / (n - 1) as f64
        } else {
            0.0
        };
        bit_lo + (q * span).round() as u8
    });
    let map = AdaptiveQuantMap {
        patch,
        bit_lo,
        bit_hi,
        bits,
    };

    let q = QuantizedMwd {
        r: quantize_patchwise(&m.r, &map),
        g: quantize_patchwise(&m.g, &map),
        b: quantize_patchwise(&m.b, &map),
        bits_r: bit_hi,
        bits_g: bit_hi,
        bits_b: bit_hi,
    };
    Ok((q, map))
}

fn quantize_patchwise(plane: &Array2<f64>, map: &AdaptiveQuantMap) -> Array2<u8> {
    let p = map.patch as usize;
    Array2::from_shape_fn(plane.dim(), |(i, j)| {
        quantize_value(plane[[i, j]], map.bits[[i / p, j / p]])
    })
}

/// Inverts [`adaptive_quantize`] using the transmitted bit map.
pub fn adaptive_dequantize(
    q: &QuantizedMwd,
    map: &AdaptiveQuantMap,
    params: &FringeParams,
) -> Result<MwdImage, QuantError> {
    let grid = patch_grid(q.width(), q.height(), map.patch);
    if map.bits.dim() != grid {
        return Err(QuantError::MapShapeMismatch {
            map: map.bits.dim(),
            grid,
        });
    }
    let p = map.patch as usize;
    let deq = |plane: &Array2<u8>| {
        Array2::from_shape_fn(plane.dim(), |(i, j)| {
            f64::from(plane[[i, j]]) / levels(map.bits[[i / p, j / p]])
        })
    };
    Ok(MwdImage {
        r: deq(&q.r),
        g: deq(&q.g),
        b: deq(&q.b),
        params: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fringe_params() -> FringeParams {
        FringeParams {
            period: 8.0,
            z_offset: 0.0,
            z_range: 16.0,
        }
    }

    #[test]
    fn quantize_known_codes() {
        let plane = arr2(&[[0.0, 1.0, 0.5, -0.3, 1.7]]);
        let q = quantize_plane(&plane, 4).unwrap();
        // 0.5·15 = 7.5 rounds away from zero to 8; out-of-range inputs clamp
        assert_eq!(q, arr2(&[[0u8, 15, 8, 0, 15]]));
    }

    #[test]
    fn dequantize_known_values() {
        let codes = arr2(&[[15u8, 8]]);
        let v = dequantize_plane(&codes, 4).unwrap();
        assert_eq!(v[[0, 0]], 1.0);
        assert_eq!(v[[0, 1]], 8.0 / 15.0);
    }

    #[test]
    fn rejects_bad_bits_and_symbols() {
        let plane = arr2(&[[0.5]]);
        assert!(matches!(
            quantize_plane(&plane, 0),
            Err(QuantError::BitsOutOfRange(0))
        ));
        assert!(matches!(
            quantize_plane(&plane, 9),
            Err(QuantError::BitsOutOfRange(9))
        ));
        let codes = arr2(&[[16u8]]);
        assert!(matches!(
            dequantize_plane(&codes, 4),
            Err(QuantError::SymbolOutOfRange { symbol: 16, bits: 4 })
        ));
    }

    #[test]
    fn dense_grid_error_bound_at_4_bits() {
        let n = 100_000;
        let mut worst = 0.0f64;
        for i in 0..=n {
            let v = i as f64 / n as f64;
            let q = quantize_value(v, 4);
            let back = f64::from(q) / 15.0;
            worst = worst.max((back - v).abs());
        }
        assert!(
            worst <= 1.0 / 30.0 + 1e-12,
            "max 4-bit error {worst} exceeds half a step"
        );
    }

    #[test]
    fn ste_forward_matches_hard_quantization_bitwise() {
        let plane = Array2::from_shape_fn((13, 7), |(i, j)| {
            ((i * 7 + j) as f64 * 0.061803).fract()
        });
        let proxy = QuantProxy::new(ProxyMode::Ste, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let fwd = proxy.forward(&plane, &mut rng);
        let hard =
            dequantize_plane(&quantize_plane(&plane, 4).unwrap(), 4).unwrap();
        assert_eq!(fwd, hard, "STE forward must equal quantize∘dequantize");
        assert_eq!(fwd[[0, 1]], quantize_value(plane[[0, 1]], 4) as f64 / 15.0);

        // identity backward
        let upstream = Array2::from_elem((13, 7), 2.5);
        assert_eq!(proxy.backward(&upstream), upstream);
    }

    #[test]
    fn ste_of_half_is_8_over_15() {
        let proxy = QuantProxy::new(ProxyMode::Ste, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let out = proxy.forward(&arr2(&[[0.5]]), &mut rng);
        assert_eq!(out[[0, 0]], 8.0 / 15.0);
    }

    #[test]
    fn noise_mode_is_unbiased_within_monte_carlo_error() {
        let proxy = QuantProxy::new(ProxyMode::Noise, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let v = 0.37;
        let n = 100_000usize;
        let plane = Array2::from_elem((1, n), v);
        let out = proxy.forward(&plane, &mut rng);
        let mean = out.iter().sum::<f64>() / n as f64;
        // noise is U(−step/2, step/2): σ_mc = step/sqrt(12 n)
        let sigma_mc = proxy.step() / (12.0 * n as f64).sqrt();
        assert!(
            (mean - v).abs() < 3.0 * sigma_mc,
            "noise-mode mean {mean} drifted from {v} beyond 3σ = {}",
            3.0 * sigma_mc
        );
    }

    #[test]
    fn adaptive_constant_image_uses_bit_lo_everywhere() {
        let m = MwdImage {
            r: Array2::from_elem((16, 16), 0.5),
            g: Array2::from_elem((16, 16), 1.0),
            b: Array2::from_elem((16, 16), 0.25),
            params: fringe_params(),
        };
        let (_, map) = adaptive_quantize(&m, 8, 2, 6).unwrap();
        assert!(map.bits.iter().all(|&b| b == 2));
    }

    #[test]
    fn adaptive_splits_flat_and_busy_halves() {
        // left patch flat, right patch a steep ramp in the coarse channel
        let b = Array2::from_shape_fn((8, 16), |(i, j)| {
            if j < 8 {
                0.5
            } else {
                ((i + j) as f64 * 0.13).fract()
            }
        });
        let m = MwdImage {
            r: Array2::from_elem((8, 16), 0.5),
            g: Array2::from_elem((8, 16), 0.5),
            b,
            params: fringe_params(),
        };
        let (q, map) = adaptive_quantize(&m, 8, 2, 6).unwrap();
        assert_eq!(map.bits.dim(), (1, 2));
        assert_eq!(map.bits[[0, 0]], 2, "flat patch takes the low bit depth");
        assert_eq!(map.bits[[0, 1]], 6, "busy patch takes the high bit depth");
        assert_eq!(q.bits_b, 6);
        // flat half quantized at 2 bits: codes within [0, 3]
        assert!(q.b.slice(ndarray::s![.., ..8]).iter().all(|&c| c <= 3));
    }

    #[test]
    fn adaptive_map_serialization_round_trips_and_sizes() {
        let m = MwdImage {
            r: Array2::from_shape_fn((20, 30), |(i, j)| ((i * j) as f64 * 0.017).fract()),
            g: Array2::from_elem((20, 30), 0.5),
            b: Array2::from_shape_fn((20, 30), |(i, j)| ((i + 3 * j) as f64 * 0.029).fract()),
            params: fringe_params(),
        };
        // ragged grid: 20×30 with patch 8 → 3×4 patches
        let (_, map) = adaptive_quantize(&m, 8, 2, 6).unwrap();
        assert_eq!(map.bits.dim(), (3, 4));
        // 5 levels need 3 bits each
        assert_eq!(map.side_info_bits(), 12 * 3);

        let bytes = map.to_bytes();
        assert_eq!(bytes.len(), 4 + (12 * 3usize).div_ceil(8));
        let back = AdaptiveQuantMap::from_bytes(&bytes, 30, 20).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn adaptive_round_trip_respects_patch_bits() {
        let m = MwdImage {
            r: Array2::from_shape_fn((12, 12), |(i, j)| ((i * 5 + j) as f64 * 0.041).fract()),
            g: Array2::from_shape_fn((12, 12), |(i, j)| ((i + j * 3) as f64 * 0.053).fract()),
            b: Array2::from_shape_fn((12, 12), |(i, j)| if i < 6 { 0.2 } else { (j as f64 * 0.083).fract() }),
            params: fringe_params(),
        };
        let (q, map) = adaptive_quantize(&m, 4, 2, 6).unwrap();
        let back = adaptive_dequantize(&q, &map, &fringe_params()).unwrap();
        let p = map.patch as usize;
        for ((i, j), &v) in back.r.indexed_iter() {
            let bits = map.bits[[i / p, j / p]];
            let tol = 0.5 / levels(bits) + 1e-12;
            assert!((v - m.r[[i, j]]).abs() <= tol);
        }
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(bits in 1u8..=8, seed in 0u64..1000) {
            let plane = Array2::from_shape_fn((4, 4), |(i, j)| {
                ((seed as f64) * 0.377 + (i * 4 + j) as f64 * 0.139).fract()
            });
            let q1 = quantize_plane(&plane, bits).unwrap();
            let d1 = dequantize_plane(&q1, bits).unwrap();
            let q2 = quantize_plane(&d1, bits).unwrap();
            prop_assert_eq!(q1, q2);
        }

        #[test]
        fn error_bounded_by_one_step(bits in 1u8..=8, v in 0.0f64..=1.0) {
            let q = quantize_value(v, bits);
            let back = f64::from(q) / levels(bits);
            prop_assert!((back - v).abs() <= 1.0 / levels(bits));
        }
    }
}
