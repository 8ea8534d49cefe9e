//! Depth-map storage and file ingestion.
//!
//! Two on-disk formats are supported:
//!
//! * **16-bit grayscale PNG** — integer depth with a configurable unit scale
//!   (e.g. millimeters). A sentinel value (0 by default, the usual convention
//!   for LiDAR-projected maps) marks invalid pixels.
//! * **Raw f32** (`.df32`) — a 16-byte header (`u32` width, `u32` height,
//!   `f64` unit scale, little-endian) followed by row-major `f32` samples.
//!   `NaN` marks invalid pixels.

use ndarray::Array2;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// A single-channel depth image with a per-pixel validity mask.
///
/// `z_min`/`z_max` are maintained over the valid pixels only; both are 0 when
/// the mask is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Error)]
pub enum DepthIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file truncated: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("bad dimensions {width}x{height}")]
    BadDims { width: u32, height: u32 },
    #[error("shape mismatch between values and mask")]
    ShapeMismatch,
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),
}

impl DepthMap {
    /// Builds a map from raw values and a mask, recomputing the z range.
    pub fn new(values: Array2<f64>, valid: Array2<bool>) -> Result<Self, DepthIoError> {
        if values.dim() != valid.dim() {
            return Err(DepthIoError::ShapeMismatch);
        }
        let mut m = DepthMap {
            values,
            valid,
            z_min: 0.0,
            z_max: 0.0,
        };
        m.refresh_range();
        Ok(m)
    }

    /// Builds an all-valid map from raw values.
    pub fn from_values(values: Array2<f64>) -> Self {
        let valid = Array2::from_elem(values.dim(), true);
        Self::new(values, valid).expect("shapes match by construction")
    }

    /// Recomputes `z_min`/`z_max` from the currently valid pixels.
    pub fn refresh_range(&mut self) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (v, &ok) in self.values.iter().zip(self.valid.iter()) {
            if ok {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if lo <= hi {
            self.z_min = lo;
            self.z_max = hi;
        } else {
            self.z_min = 0.0;
            self.z_max = 0.0;
        }
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

// ── Raw f32 format ───────────────────────────────────────────────────────────

const RAW_HEADER_LEN: usize = 16;

/// Writes a depth map as raw f32, dividing by `scale` before the f32 cast.
/// Invalid pixels are stored as `NaN`.
pub fn write_raw_f32(path: &Path, map: &DepthMap, scale: f64) -> Result<(), DepthIoError> {
    let (h, w) = map.values.dim();
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * w * h);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    for (v, &ok) in map.values.iter().zip(map.valid.iter()) {
        let s = if ok { (*v / scale) as f32 } else { f32::NAN };
        out.extend_from_slice(&s.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Reads a raw f32 depth map, multiplying samples by the stored unit scale.
pub fn read_raw_f32(path: &Path) -> Result<DepthMap, DepthIoError> {
    let bytes = fs::read(path)?;
    if bytes.len() < RAW_HEADER_LEN {
        return Err(DepthIoError::Truncated {
            expected: RAW_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let scale = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if w == 0 || h == 0 || (w as u64) * (h as u64) > (1 << 32) {
        return Err(DepthIoError::BadDims {
            width: w,
            height: h,
        });
    }
    let n = w as usize * h as usize;
    let expected = RAW_HEADER_LEN + 4 * n;
    if bytes.len() < expected {
        return Err(DepthIoError::Truncated {
            expected: expected - RAW_HEADER_LEN,
            found: bytes.len() - RAW_HEADER_LEN,
        });
    }
    let mut values = Array2::zeros((h as usize, w as usize));
    let mut valid = Array2::from_elem((h as usize, w as usize), true);
    for i in 0..n {
        let off = RAW_HEADER_LEN + 4 * i;
        let s = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let (r, c) = (i / w as usize, i % w as usize);
        if s.is_nan() {
            valid[[r, c]] = false;
        } else {
            values[[r, c]] = s as f64 * scale;
        }
    }
    DepthMap::new(values, valid)
}

// ── 16-bit grayscale PNG ─────────────────────────────────────────────────────

/// Reads a 16-bit grayscale PNG. Samples are multiplied by `scale`;
/// `sentinel` (commonly 0) marks invalid pixels when given.
pub fn read_png16(
    path: &Path,
    scale: f64,
    sentinel: Option<u16>,
) -> Result<DepthMap, DepthIoError> {
    let img = image::open(path).map_err(|e| DepthIoError::UnsupportedImage(e.to_string()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => image::DynamicImage::to_luma16(&other),
    };
    let (w, h) = gray.dimensions();
    let mut values = Array2::zeros((h as usize, w as usize));
    let mut valid = Array2::from_elem((h as usize, w as usize), true);
    for (x, y, p) in gray.enumerate_pixels() {
        let raw = p.0[0];
        if sentinel == Some(raw) {
            valid[[y as usize, x as usize]] = false;
        } else {
            values[[y as usize, x as usize]] = raw as f64 * scale;
        }
    }
    DepthMap::new(values, valid)
}

/// Writes a 16-bit grayscale PNG, storing `round(v / scale)` per pixel and
/// the sentinel at invalid ones. Values that would overflow u16 are clamped.
pub fn write_png16(
    path: &Path,
    map: &DepthMap,
    scale: f64,
    sentinel: u16,
) -> Result<(), DepthIoError> {
    let (h, w) = map.values.dim();
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let (r, c) = (y as usize, x as usize);
        *p = if map.valid[[r, c]] {
            let q = (map.values[[r, c]] / scale).round().clamp(0.0, 65535.0) as u16;
            image::Luma([q])
        } else {
            image::Luma([sentinel])
        };
    }
    img.save(path)
        .map_err(|e| DepthIoError::UnsupportedImage(e.to_string()))?;
    Ok(())
}
