//! Baseline lossless codec for quantized fringe planes.
//!
//! Each plane is predicted causally (left neighbor, with the top neighbor
//! at row starts and zero at the origin), and the modular prediction
//! residuals are coded with an adaptive order-0 model. Smooth fringe
//! content concentrates residuals near zero, which the adaptive model
//! learns within a few rows. The validity mask travels separately as
//! run lengths.

use ndarray::Array2;

use super::range::{AdaptiveModel, RangeDecoder, RangeEncoder};
use super::EntropyError;
use crate::quant::QuantizedMwd;

/// Causal predictor shared by encoder and decoder: left neighbor, falling
/// back to the pixel above at a row start, and zero at the origin.
fn predict(plane: &Array2<u8>, y: usize, x: usize) -> u8 {
    if x > 0 {
        plane[[y, x - 1]]
    } else if y > 0 {
        plane[[y - 1, x]]
    } else {
        0
    }
}

/// Encodes one quantized plane. The frame is
/// `[u32 pixel count LE][u8 bit depth][range-coded residuals]`.
pub fn encode_plane(plane: &Array2<u8>, bits: u8) -> Result<Vec<u8>, EntropyError> {
    assert!((1..=8).contains(&bits), "plane bit depth {bits}");
    let levels = 1u16 << bits;
    let n = plane.len();
    if n > u32::MAX as usize {
        return Err(EntropyError::BadFrame("plane exceeds u32 pixels".into()));
    }
    let (h, w) = plane.dim();
    let mut model = AdaptiveModel::new(levels as usize);
    let mut enc = RangeEncoder::new();
    for y in 0..h {
        for x in 0..w {
            let v = plane[[y, x]] as u16;
            if v >= levels {
                return Err(EntropyError::ModelMismatch {
                    symbol: v as usize,
                    alphabet: levels as usize,
                });
            }
            let pred = predict(plane, y, x) as u16;
            let residual = (v + levels - pred) % levels;
            model.encode(residual as usize, &mut enc)?;
        }
    }
    let payload = enc.finish();
    let mut out = Vec::with_capacity(payload.len() + 5);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(bits);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes a plane frame produced by [`encode_plane`]. The width comes from
/// the container header; the height is recovered from the pixel count.
pub fn decode_plane(bytes: &[u8], width: usize) -> Result<(Array2<u8>, u8), EntropyError> {
    if bytes.len() < 5 {
        return Err(EntropyError::BadFrame("plane frame shorter than header".into()));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let bits = bytes[4];
    if !(1..=8).contains(&bits) {
        return Err(EntropyError::BadFrame(format!("plane bit depth {bits}")));
    }
    if width == 0 || !n.is_multiple_of(width) {
        return Err(EntropyError::BadFrame(format!(
            "pixel count {n} does not divide into rows of {width}"
        )));
    }
    let h = n / width;
    let levels = 1u16 << bits;
    let mut model = AdaptiveModel::new(levels as usize);
    let mut dec = RangeDecoder::new(&bytes[5..])?;
    let mut plane = Array2::<u8>::zeros((h, width));
    for y in 0..h {
        for x in 0..width {
            let residual = model.decode(&mut dec)? as u16;
            let pred = predict(&plane, y, x) as u16;
            plane[[y, x]] = ((pred + residual) % levels) as u8;
        }
    }
    Ok((plane, bits))
}

/// Encodes a validity mask as alternating run lengths in row-major order.
/// The frame is `[u8 first value][range-coded run tokens]`, where each run
/// stores `length - 1` in base-255 escape bytes (0xFF means "add 255 and
/// keep reading").
pub fn encode_mask(mask: &Array2<bool>) -> Result<Vec<u8>, EntropyError> {
    let n = mask.len();
    if n == 0 {
        return Err(EntropyError::BadFrame("empty mask".into()));
    }
    let mut flat = mask.iter();
    let first = *flat.next().unwrap();
    let mut model = AdaptiveModel::new(256);
    let mut enc = RangeEncoder::new();
    let mut current = first;
    let mut run: usize = 1;
    let emit = |len: usize,
                    model: &mut AdaptiveModel,
                    enc: &mut RangeEncoder|
     -> Result<(), EntropyError> {
        let mut rem = len - 1;
        while rem >= 255 {
            model.encode(255, enc)?;
            rem -= 255;
        }
        model.encode(rem, enc)
    };
    for &v in flat {
        if v == current {
            run += 1;
        } else {
            emit(run, &mut model, &mut enc)?;
            current = v;
            run = 1;
        }
    }
    emit(run, &mut model, &mut enc)?;
    let payload = enc.finish();
    let mut out = Vec::with_capacity(payload.len() + 1);
    out.push(first as u8);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes a mask frame produced by [`encode_mask`] back to `height` rows
/// of `width` booleans.
pub fn decode_mask(
    bytes: &[u8],
    width: usize,
    height: usize,
) -> Result<Array2<bool>, EntropyError> {
    let n = width * height;
    if n == 0 {
        return Err(EntropyError::BadFrame("empty mask".into()));
    }
    let (&first, payload) = bytes
        .split_first()
        .ok_or_else(|| EntropyError::BadFrame("mask frame shorter than header".into()))?;
    if first > 1 {
        return Err(EntropyError::BadFrame(format!("mask lead byte {first}")));
    }
    let mut model = AdaptiveModel::new(256);
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(n);
    let mut current = first == 1;
    while out.len() < n {
        let mut len: usize = 1;
        loop {
            let tok = model.decode(&mut dec)?;
            len += tok;
            if tok < 255 {
                break;
            }
        }
        if out.len() + len > n {
            return Err(EntropyError::BadFrame(format!(
                "mask runs overflow {n} pixels"
            )));
        }
        out.extend(std::iter::repeat_n(current, len));
        current = !current;
    }
    Array2::from_shape_vec((height, width), out)
        .map_err(|e| EntropyError::BadFrame(format!("mask shape: {e}")))
}

/// Codes a full quantized fringe image: the mask frame plus one plane frame
/// per channel, in (mask, r, g, b) order.
pub fn encode_planes_baseline(
    q: &QuantizedMwd,
    mask: &Array2<bool>,
) -> Result<(Vec<u8>, [Vec<u8>; 3]), EntropyError> {
    let mask_bytes = encode_mask(mask)?;
    let planes = [
        encode_plane(&q.r, q.bits_r)?,
        encode_plane(&q.g, q.bits_g)?,
        encode_plane(&q.b, q.bits_b)?,
    ];
    Ok((mask_bytes, planes))
}
