//! Distortion and rate metrics for reconstructed depth.
//!
//! Error statistics are computed only over pixels the ground truth marks
//! valid, normalized by the ground-truth depth range. PSNR follows the
//! normalized-depth convention `PSNR = -20·log10(NRMSE)`, so a 0.1%
//! normalized error reads as 60 dB regardless of the scene's depth units.
//! Rate fields keep the underlying integer bit counts so `bpp` and the
//! compression ratio can be recomputed exactly.

use ndarray::Array2;
use thiserror::Error;

use crate::depth::DepthMap;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground truth has no valid pixels")]
    EmptyMask,
    #[error("reconstruction is {got:?} but ground truth is {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Quality and rate summary for one coded depth map.
///
/// When the ground-truth range is zero, `nrmse` and `accuracy_pct` are
/// reported as NaN (the normalization is undefined); a perfect
/// reconstruction reports `psnr_db` as `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub nrmse: f64,
    pub psnr_db: f64,
    pub accuracy_pct: f64,
    /// Coded bits per pixel of the *original* resolution (all pixels,
    /// valid or not).
    pub bpp: f64,
    /// Original size over coded size.
    pub compression_ratio: f64,
    pub valid_pixel_count: u64,
    /// Integer bit counts behind `bpp` and `compression_ratio`, kept so
    /// the couplings can be verified without floating-point slack.
    pub coded_bits: u64,
    pub pixel_count: u64,
}

/// Raw bits per pixel assumed for the uncompressed source when the caller
/// does not supply an original size (16-bit depth maps).
pub const DEFAULT_RAW_BPP: u64 = 16;

/// Compares a reconstruction against ground truth and combines the error
/// statistics with the coded size. `original_bits` overrides the raw-size
/// numerator of the compression ratio; `None` assumes 16-bit depth.
pub fn compute_metrics(
    gt: &DepthMap,
    recon: &Array2<f64>,
    coded_bits: u64,
    original_bits: Option<u64>,
) -> Result<MetricsReport, MetricsError> {
    if recon.dim() != gt.values.dim() {
        return Err(MetricsError::ShapeMismatch {
            expected: gt.values.dim(),
            got: recon.dim(),
        });
    }
    let mut sq_sum = 0.0;
    let mut n_valid = 0u64;
    for ((z, &ok), r) in gt.values.iter().zip(gt.valid.iter()).zip(recon.iter()) {
        if ok {
            let e = z - r;
            sq_sum += e * e;
            n_valid += 1;
        }
    }
    if n_valid == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let rmse = (sq_sum / n_valid as f64).sqrt();
    let range = gt.z_max - gt.z_min;
    let (nrmse, accuracy_pct) = if range > 0.0 {
        let nrmse = rmse / range;
        (nrmse, (1.0 - nrmse) * 100.0)
    } else {
        (f64::NAN, f64::NAN)
    };
    let psnr_db = if rmse == 0.0 {
        f64::INFINITY
    } else if range > 0.0 {
        -20.0 * nrmse.log10()
    } else {
        f64::NAN
    };

    let pixel_count = gt.values.len() as u64;
    let bpp = coded_bits as f64 / pixel_count as f64;
    let original_bits = original_bits.unwrap_or(DEFAULT_RAW_BPP * pixel_count);
    let compression_ratio = if coded_bits == 0 {
        f64::INFINITY
    } else {
        original_bits as f64 / coded_bits as f64
    };

    Ok(MetricsReport {
        rmse,
        nrmse,
        psnr_db,
        accuracy_pct,
        bpp,
        compression_ratio,
        valid_pixel_count: n_valid,
        coded_bits,
        pixel_count,
    })
}
