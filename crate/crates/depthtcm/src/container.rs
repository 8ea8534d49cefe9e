//! Self-describing bitstream container for coded depth maps.
//!
//! A container is one little-endian header followed by concatenated payload
//! sections. The header records everything the decoder needs — image
//! dimensions, the affine prescale, fringe parameters, per-channel bit
//! depths, and one length per section — so decoding requires no information
//! beyond the bytes themselves. Encoding is a pure function of the input
//! map and the configuration: the same input always produces the same bytes.
//!
//! Header layout (offsets in bytes):
//!
//! ```text
//!  0  magic          "DTCM"
//!  4  version        u8, currently 1
//!  5  codec id       u8: 0 = predictive baseline, 1 = learned transform
//!  6  bits r,g,b     u8 ×3, quantizer depth per fringe channel
//!  9  flags          u8: bit 0 mask section present, bit 1 adaptive map
//! 10  width          u32
//! 14  height         u32
//! 18  z offset       f64, raw-depth origin of the prescale remap
//! 26  z range        f64, working-range span after prescaling
//! 34  prescale       f64, multiplicative factor of the prescale remap
//! 42  period         f64, fringe period in working units
//! 50  section count  u8
//! 51  section length u64 × count
//! ```
//!
//! Section order is fixed: the run-length mask (when flagged), then the
//! adaptive bit map (when flagged, baseline only), then the codec payload —
//! three predictively coded planes for the baseline, or a model checkpoint
//! followed by the range-coded latent stream for the learned codec. Shipping
//! the checkpoint keeps learned containers self-contained at the cost of
//! size; callers who care about rate amortize it across a corpus or stick
//! with the baseline.

use ndarray::{Array2, Array3};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::codec::checkpoint::{parse_model, serialize_model};
use crate::codec::latent::{decode_latents, encode_latents};
use crate::codec::nn::{crop, pad_to_multiple};
use crate::codec::{CodecError, CodecModel, TOTAL_STRIDE};
use crate::depth::{read_png16, read_raw_f32, DepthIoError, DepthMap};
use crate::entropy::{decode_mask, decode_plane, encode_mask, encode_plane, EntropyError};
use crate::mwd::{
    mwd_decode, mwd_encode, prescale_depth, FringeParams, MwdError, MwdImage, ScaleRecord,
};
use crate::quant::{
    adaptive_dequantize, adaptive_quantize, dequantize_mwd, quantize_mwd, AdaptiveQuantMap,
    QuantError, QuantizedMwd,
};

const MAGIC: &[u8; 4] = b"DTCM";
const VERSION: u8 = 1;
/// Header bytes before the per-section length table.
const FIXED_HEADER_LEN: usize = 51;

const FLAG_MASK: u8 = 1 << 0;
const FLAG_ADAPTIVE: u8 = 1 << 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: not a depth container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("container truncated")]
    TruncatedStream,
    #[error("section lengths declare {declared} payload bytes but {actual} are present")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("the learned codec needs a model")]
    ModelRequired,
    #[error(transparent)]
    Mwd(#[from] MwdError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    DepthIo(#[from] DepthIoError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<ContainerError>,
    },
}

fn with_path<T>(r: Result<T, ContainerError>, path: &Path) -> Result<T, ContainerError> {
    r.map_err(|e| ContainerError::File {
        path: path.to_owned(),
        source: Box::new(e),
    })
}

// ── Header ───────────────────────────────────────────────────────────────────

/// Which entropy pipeline coded the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecId {
    /// Predictive plane coder on the quantized fringe image; lossless given
    /// the quantized planes.
    Baseline = 0,
    /// Learned transform with a hyperprior entropy model; the checkpoint
    /// travels in the container.
    Learned = 1,
}

impl CodecId {
    fn from_byte(b: u8) -> Result<Self, ContainerError> {
        match b {
            0 => Ok(CodecId::Baseline),
            1 => Ok(CodecId::Learned),
            other => Err(ContainerError::Malformed(format!("codec id {other}"))),
        }
    }
}

/// Parsed container header; see the module docs for the byte layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub codec: CodecId,
    pub bits: (u8, u8, u8),
    pub mask_present: bool,
    pub adaptive_present: bool,
    pub width: u32,
    pub height: u32,
    /// Raw-depth origin subtracted by the prescale remap.
    pub z_offset: f64,
    /// Working-range span; fringe images normalize their coarse channel by it.
    pub z_range: f64,
    /// Multiplicative prescale factor (1 when the input already fit).
    pub prescale: f64,
    /// Fringe period in working units.
    pub period: f64,
    pub section_lens: Vec<u64>,
}

impl ContainerHeader {
    pub fn serialized_len(&self) -> usize {
        FIXED_HEADER_LEN + 8 * self.section_lens.len()
    }
}

pub fn serialize_header(h: &ContainerHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(h.serialized_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(h.codec as u8);
    out.push(h.bits.0);
    out.push(h.bits.1);
    out.push(h.bits.2);
    let mut flags = 0u8;
    if h.mask_present {
        flags |= FLAG_MASK;
    }
    if h.adaptive_present {
        flags |= FLAG_ADAPTIVE;
    }
    out.push(flags);
    out.extend_from_slice(&h.width.to_le_bytes());
    out.extend_from_slice(&h.height.to_le_bytes());
    out.extend_from_slice(&h.z_offset.to_le_bytes());
    out.extend_from_slice(&h.z_range.to_le_bytes());
    out.extend_from_slice(&h.prescale.to_le_bytes());
    out.extend_from_slice(&h.period.to_le_bytes());
    out.push(h.section_lens.len() as u8);
    for &len in &h.section_lens {
        out.extend_from_slice(&len.to_le_bytes());
    }
    out
}

/// Parses a header off the front of `bytes`, returning it with the offset
/// where the payload sections begin. Nothing is returned for a short or
/// corrupt prefix.
pub fn parse_header(bytes: &[u8]) -> Result<(ContainerHeader, usize), ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::TruncatedStream);
    }
    if &bytes[0..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(ContainerError::TruncatedStream);
    }
    if bytes[4] != VERSION {
        return Err(ContainerError::UnsupportedVersion(bytes[4]));
    }
    let codec = CodecId::from_byte(bytes[5])?;
    let bits = (bytes[6], bytes[7], bytes[8]);
    for b in [bits.0, bits.1, bits.2] {
        if !(1..=8).contains(&b) {
            return Err(ContainerError::Malformed(format!("bit depth {b}")));
        }
    }
    let flags = bytes[9];
    if flags & !(FLAG_MASK | FLAG_ADAPTIVE) != 0 {
        return Err(ContainerError::Malformed(format!("flags {flags:#04x}")));
    }
    let le_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let le_f64 = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let width = le_u32(10);
    let height = le_u32(14);
    if width == 0 || height == 0 || u64::from(width) * u64::from(height) > 1 << 32 {
        return Err(ContainerError::Malformed(format!(
            "dimensions {width}x{height}"
        )));
    }
    let z_offset = le_f64(18);
    let z_range = le_f64(26);
    let prescale = le_f64(34);
    let period = le_f64(42);
    if !z_offset.is_finite()
        || !(z_range.is_finite() && z_range > 0.0)
        || !(prescale.is_finite() && prescale > 0.0)
        || !(period.is_finite() && period > 0.0)
    {
        return Err(ContainerError::Malformed(
            "non-finite or non-positive scale fields".into(),
        ));
    }
    let n_sections = bytes[50] as usize;
    let table_end = FIXED_HEADER_LEN + 8 * n_sections;
    if bytes.len() < table_end {
        return Err(ContainerError::TruncatedStream);
    }
    let section_lens = (0..n_sections)
        .map(|i| u64::from_le_bytes(bytes[FIXED_HEADER_LEN + 8 * i..][..8].try_into().unwrap()))
        .collect();
    let header = ContainerHeader {
        codec,
        bits,
        mask_present: flags & FLAG_MASK != 0,
        adaptive_present: flags & FLAG_ADAPTIVE != 0,
        width,
        height,
        z_offset,
        z_range,
        prescale,
        period,
        section_lens,
    };
    Ok((header, table_end))
}

// ── Encoding ─────────────────────────────────────────────────────────────────

/// Per-patch bit allocation request for the baseline codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptivePolicy {
    pub patch: u16,
    pub bit_lo: u8,
    pub bit_hi: u8,
}

/// Everything `encode_depth` needs besides the input map (and a model for
/// the learned codec).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Quantizer depth per fringe channel; the third entry is the coarse
    /// channel, which bounds the representable depth span.
    pub bits: (u8, u8, u8),
    pub codec: CodecId,
    /// Fringe period in working units.
    pub period: f64,
    /// Baseline-only per-patch bit allocation; `bits` is ignored for the
    /// planes when set (the coarse channel still prescales at the policy's
    /// low end, so every patch resolves fringe orders).
    pub adaptive: Option<AdaptivePolicy>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bits: (4, 4, 4),
            codec: CodecId::Baseline,
            period: FringeParams::DEFAULT_PERIOD,
            adaptive: None,
        }
    }
}

/// Stacks the three fringe planes into the `(3, h, w)` layout the codec
/// transforms consume.
pub fn image_to_array(img: &MwdImage) -> Array3<f64> {
    let (h, w) = (img.height(), img.width());
    let mut x = Array3::zeros((3, h, w));
    for i in 0..h {
        for j in 0..w {
            x[[0, i, j]] = img.r[[i, j]];
            x[[1, i, j]] = img.g[[i, j]];
            x[[2, i, j]] = img.b[[i, j]];
        }
    }
    x
}

/// Runs the full pipeline — prescale, fringe encode, quantize, entropy-code —
/// and wraps the result in a container. Deterministic: equal inputs give
/// byte-identical output.
pub fn encode_depth(
    map: &DepthMap,
    cfg: &PipelineConfig,
    model: Option<&mut CodecModel>,
) -> Result<Vec<u8>, ContainerError> {
    // The coarse channel must resolve fringe orders even in the patches
    // quantized most coarsely.
    let blue_bits = cfg.adaptive.map_or(cfg.bits.2, |p| p.bit_lo);
    let (working, params, record) = prescale_depth(map, cfg.period, blue_bits)?;
    let img = mwd_encode(&working, &params, blue_bits)?;

    let mask_present = map.valid_count() < map.valid.len();
    let mut sections: Vec<Vec<u8>> = Vec::new();
    if mask_present {
        sections.push(encode_mask(&map.valid)?);
    }

    let bits;
    match cfg.codec {
        CodecId::Baseline => {
            let q = match cfg.adaptive {
                None => quantize_mwd(&img, cfg.bits)?,
                Some(p) => {
                    let (q, amap) = adaptive_quantize(&img, p.patch, p.bit_lo, p.bit_hi)?;
                    sections.push(amap.to_bytes());
                    q
                }
            };
            bits = (q.bits_r, q.bits_g, q.bits_b);
            sections.push(encode_plane(&q.r, q.bits_r)?);
            sections.push(encode_plane(&q.g, q.bits_g)?);
            sections.push(encode_plane(&q.b, q.bits_b)?);
        }
        CodecId::Learned => {
            if cfg.adaptive.is_some() {
                return Err(ContainerError::Malformed(
                    "adaptive quantization applies to the baseline codec only".into(),
                ));
            }
            let model = model.ok_or(ContainerError::ModelRequired)?;
            bits = cfg.bits;
            // The transform sees the scalar-quantized image, matching what
            // it was trained on.
            let img_q = dequantize_mwd(&quantize_mwd(&img, cfg.bits)?, &params)?;
            let x = pad_to_multiple(&image_to_array(&img_q), TOTAL_STRIDE);
            let y = model.analysis_forward(&x, false);
            let z = model.hyper_analysis_forward(&y, false);
            let coded = encode_latents(model, &y, &z)?;
            sections.push(serialize_model(model));
            sections.push(coded.bytes);
        }
    }

    let header = ContainerHeader {
        codec: cfg.codec,
        bits,
        mask_present,
        adaptive_present: cfg.adaptive.is_some(),
        width: map.width() as u32,
        height: map.height() as u32,
        z_offset: record.offset,
        z_range: params.z_range,
        prescale: record.scale,
        period: cfg.period,
        section_lens: sections.iter().map(|s| s.len() as u64).collect(),
    };
    let mut out = serialize_header(&header);
    for s in &sections {
        out.extend_from_slice(s);
    }
    Ok(out)
}

// ── Decoding ─────────────────────────────────────────────────────────────────

/// Exact coded representation recovered by the decoder, before the fringe
/// image is turned back into depth. Lets callers verify losslessness of the
/// entropy layer without re-encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodedPayload {
    Baseline {
        planes: QuantizedMwd,
        adaptive: Option<AdaptiveQuantMap>,
    },
    Learned {
        y_hat: Array3<f64>,
        z_hat: Array3<f64>,
    },
}

/// A decoded container: reconstructed depth (validity mask applied), the
/// header it was decoded under, and the exact coded symbols.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub depth: DepthMap,
    pub header: ContainerHeader,
    pub payload: DecodedPayload,
}

fn take_section<'a>(
    sections: &mut impl Iterator<Item = &'a [u8]>,
) -> Result<&'a [u8], ContainerError> {
    sections
        .next()
        .ok_or_else(|| ContainerError::Malformed("missing payload section".into()))
}

fn decode_plane_checked(
    bytes: &[u8],
    expected_bits: u8,
    h: usize,
    w: usize,
) -> Result<Array2<u8>, ContainerError> {
    let (plane, bits) = decode_plane(bytes, w)?;
    if bits != expected_bits {
        return Err(ContainerError::Malformed(format!(
            "plane coded at {bits} bits but header says {expected_bits}"
        )));
    }
    if plane.dim() != (h, w) {
        return Err(ContainerError::Malformed(format!(
            "plane is {:?}, header says ({h}, {w})",
            plane.dim()
        )));
    }
    Ok(plane)
}

/// Decodes a container produced by [`encode_depth`]. Needs nothing but the
/// bytes: scale parameters come from the header and, for the learned codec,
/// the model from its checkpoint section.
pub fn decode_bytes(bytes: &[u8]) -> Result<Decoded, ContainerError> {
    let (header, payload_start) = parse_header(bytes)?;
    let declared: u64 = header.section_lens.iter().try_fold(0u64, |acc, &l| {
        acc.checked_add(l)
            .ok_or_else(|| ContainerError::Malformed("section lengths overflow".into()))
    })?;
    let actual = (bytes.len() - payload_start) as u64;
    if declared != actual {
        return Err(ContainerError::LengthMismatch { declared, actual });
    }

    let mut offset = payload_start;
    let slices: Vec<&[u8]> = header
        .section_lens
        .iter()
        .map(|&l| {
            let s = &bytes[offset..offset + l as usize];
            offset += l as usize;
            s
        })
        .collect();
    let mut sections = slices.into_iter();

    let (h, w) = (header.height as usize, header.width as usize);
    let expected_sections = match header.codec {
        CodecId::Baseline => 3 + usize::from(header.mask_present) + usize::from(header.adaptive_present),
        CodecId::Learned => 2 + usize::from(header.mask_present),
    };
    if header.section_lens.len() != expected_sections {
        return Err(ContainerError::Malformed(format!(
            "{} sections, expected {expected_sections}",
            header.section_lens.len()
        )));
    }

    let mask = if header.mask_present {
        decode_mask(take_section(&mut sections)?, w, h)?
    } else {
        Array2::from_elem((h, w), true)
    };

    let params = FringeParams {
        period: header.period,
        z_offset: 0.0,
        z_range: header.z_range,
    };
    let (img, payload) = match header.codec {
        CodecId::Baseline => {
            let adaptive = if header.adaptive_present {
                Some(AdaptiveQuantMap::from_bytes(
                    take_section(&mut sections)?,
                    w,
                    h,
                )?)
            } else {
                None
            };
            let planes = QuantizedMwd {
                r: decode_plane_checked(take_section(&mut sections)?, header.bits.0, h, w)?,
                g: decode_plane_checked(take_section(&mut sections)?, header.bits.1, h, w)?,
                b: decode_plane_checked(take_section(&mut sections)?, header.bits.2, h, w)?,
                bits_r: header.bits.0,
                bits_g: header.bits.1,
                bits_b: header.bits.2,
            };
            let img = match &adaptive {
                None => dequantize_mwd(&planes, &params)?,
                Some(m) => adaptive_dequantize(&planes, m, &params)?,
            };
            (img, DecodedPayload::Baseline { planes, adaptive })
        }
        CodecId::Learned => {
            let mut model = parse_model(take_section(&mut sections)?)?;
            let ph = h.next_multiple_of(TOTAL_STRIDE);
            let pw = w.next_multiple_of(TOTAL_STRIDE);
            let (y_dim, z_dim) = model.latent_dims(ph, pw);
            let (y_hat, z_hat) = decode_latents(&mut model, y_dim, z_dim, take_section(&mut sections)?)?;
            let x_pad = model.synthesis_forward(&y_hat, false);
            let x = crop(&x_pad, h, w);
            let img = MwdImage {
                r: x.index_axis(ndarray::Axis(0), 0).to_owned(),
                g: x.index_axis(ndarray::Axis(0), 1).to_owned(),
                b: x.index_axis(ndarray::Axis(0), 2).to_owned(),
                params,
            };
            (img, DecodedPayload::Learned { y_hat, z_hat })
        }
    };

    let record = ScaleRecord {
        offset: header.z_offset,
        scale: header.prescale,
    };
    let full = mwd_decode(&img, &record);
    let depth = DepthMap::new(full.values, mask)?;
    Ok(Decoded {
        depth,
        header,
        payload,
    })
}

// ── File-level wrappers ──────────────────────────────────────────────────────

/// How depth files are interpreted on ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    /// Unit scale applied to 16-bit PNG samples (e.g. 0.001 for millimeters
    /// stored as integers, depths wanted in meters).
    pub png_scale: f64,
    /// 16-bit sample marking invalid pixels; `None` treats every pixel as
    /// valid.
    pub png_sentinel: Option<u16>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            png_scale: 1.0,
            png_sentinel: Some(0),
        }
    }
}

/// Reads a depth file by extension: `.png` as 16-bit grayscale, anything
/// else as the raw f32 format.
pub fn read_depth_auto(path: &Path, opts: &IngestOptions) -> Result<DepthMap, ContainerError> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let map = if is_png {
        read_png16(path, opts.png_scale, opts.png_sentinel)
    } else {
        read_raw_f32(path)
    };
    with_path(map.map_err(ContainerError::from), path)
}

/// [`encode_depth`] on a depth file; errors carry the offending path.
pub fn encode_file(
    input: &Path,
    cfg: &PipelineConfig,
    opts: &IngestOptions,
    model: Option<&mut CodecModel>,
) -> Result<Vec<u8>, ContainerError> {
    let map = read_depth_auto(input, opts)?;
    with_path(encode_depth(&map, cfg, model), input)
}

/// [`decode_bytes`] on a container file; errors carry the offending path.
pub fn decode_file(path: &Path) -> Result<Decoded, ContainerError> {
    let bytes = with_path(fs::read(path).map_err(ContainerError::from), path)?;
    with_path(decode_bytes(&bytes), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::synth::SynthConfig;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::TAU;

    fn synth_map(seed: u64, w: usize, h: usize, holes: f64) -> DepthMap {
        crate::synth::generate(&SynthConfig {
            width: w,
            height: h,
            seed,
            mask_fraction: holes,
            ..SynthConfig::default()
        })
    }

    fn tiny_model(seed: u64) -> CodecModel {
        let cfg = CodecConfig {
            c_mid: 4,
            c_y: 4,
            c_z: 4,
            window: 2,
        };
        CodecModel::new(cfg, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    fn default_header() -> ContainerHeader {
        ContainerHeader {
            codec: CodecId::Baseline,
            bits: (4, 4, 4),
            mask_present: true,
            adaptive_present: false,
            width: 64,
            height: 48,
            z_offset: 1.25,
            z_range: 12.0,
            prescale: 1.0,
            period: 8.0,
            section_lens: vec![10, 20, 30, 40],
        }
    }

    #[test]
    fn header_round_trips_byte_identically() {
        let h = default_header();
        let bytes = serialize_header(&h);
        assert_eq!(bytes.len(), h.serialized_len());
        let (back, offset) = parse_header(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(offset, bytes.len());
        // and the parser tolerates trailing payload bytes
        let mut with_payload = bytes.clone();
        with_payload.extend_from_slice(&[0xab; 100]);
        let (again, off2) = parse_header(&with_payload).unwrap();
        assert_eq!(again, h);
        assert_eq!(off2, bytes.len());
    }

    #[test]
    fn truncated_header_is_rejected_at_every_length() {
        let bytes = serialize_header(&default_header());
        for cut in 0..bytes.len() {
            let err = parse_header(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, ContainerError::TruncatedStream),
                "cut at {cut} gave {err:?}"
            );
        }
    }

    #[test]
    fn corrupt_magic_is_bad_magic() {
        let mut bytes = serialize_header(&default_header());
        for i in 0..4 {
            let mut b = bytes.clone();
            b[i] ^= 0x20;
            assert!(matches!(
                parse_header(&b).unwrap_err(),
                ContainerError::BadMagic
            ));
        }
        // version bump on intact magic
        bytes[4] = 9;
        assert!(matches!(
            parse_header(&bytes).unwrap_err(),
            ContainerError::UnsupportedVersion(9)
        ));
    }

    #[test]
    fn bogus_header_fields_are_rejected() {
        let mut h = default_header();
        h.bits.1 = 0;
        assert!(matches!(
            parse_header(&serialize_header(&h)).unwrap_err(),
            ContainerError::Malformed(_)
        ));

        let mut h = default_header();
        h.period = -1.0;
        assert!(matches!(
            parse_header(&serialize_header(&h)).unwrap_err(),
            ContainerError::Malformed(_)
        ));

        let mut bytes = serialize_header(&default_header());
        bytes[9] = 0x80; // undefined flag bit
        assert!(matches!(
            parse_header(&bytes).unwrap_err(),
            ContainerError::Malformed(_)
        ));
    }

    #[test]
    fn payload_length_mismatch_is_detected() {
        let map = synth_map(3, 32, 24, 0.05);
        let bytes = encode_depth(&map, &PipelineConfig::default(), None).unwrap();
        // dropping payload bytes (header intact) must not pass unnoticed
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_bytes(short).unwrap_err(),
            ContainerError::LengthMismatch { .. }
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_bytes(&long).unwrap_err(),
            ContainerError::LengthMismatch { .. }
        ));
    }

    #[test]
    fn baseline_round_trip_recovers_planes_mask_and_depth() {
        let map = synth_map(11, 48, 40, 0.08);
        let cfg = PipelineConfig::default();
        let bytes = encode_depth(&map, &cfg, None).unwrap();
        let again = encode_depth(&map, &cfg, None).unwrap();
        assert_eq!(bytes, again, "encoding must be deterministic");

        let dec = decode_bytes(&bytes).unwrap();
        assert_eq!(dec.depth.valid, map.valid, "mask must round-trip exactly");
        assert_eq!(dec.header.bits, (4, 4, 4));

        // the coded planes must equal an independently computed quantization
        let (working, params, _) = prescale_depth(&map, cfg.period, 4).unwrap();
        let img = mwd_encode(&working, &params, 4).unwrap();
        let q = quantize_mwd(&img, cfg.bits).unwrap();
        match &dec.payload {
            DecodedPayload::Baseline { planes, adaptive } => {
                assert_eq!(planes, &q);
                assert!(adaptive.is_none());
            }
            other => panic!("expected baseline payload, got {other:?}"),
        }

        // depth error bounded by one phase step of depth at 4 bits — an
        // ample bound for correct fringe-order recovery, far below P/2
        let bound = cfg.period / 15.0 / dec.header.prescale;
        for ((a, b), &ok) in dec
            .depth
            .values
            .iter()
            .zip(map.values.iter())
            .zip(map.valid.iter())
        {
            if ok {
                assert!((a - b).abs() <= bound, "|{a} - {b}| > {bound}");
            }
        }
    }

    #[test]
    fn four_bit_container_is_smaller_than_eight_bit() {
        let map = synth_map(21, 64, 64, 0.0);
        let mut cfg = PipelineConfig {
            bits: (4, 4, 4),
            ..PipelineConfig::default()
        };
        let four = encode_depth(&map, &cfg, None).unwrap();
        cfg.bits = (8, 8, 8);
        let eight = encode_depth(&map, &cfg, None).unwrap();
        assert!(
            four.len() < eight.len(),
            "4-bit {} vs 8-bit {}",
            four.len(),
            eight.len()
        );
    }

    #[test]
    fn all_invalid_input_is_refused() {
        let values = Array2::zeros((8, 8));
        let valid = Array2::from_elem((8, 8), false);
        let map = DepthMap::new(values, valid).unwrap();
        assert!(matches!(
            encode_depth(&map, &PipelineConfig::default(), None).unwrap_err(),
            ContainerError::Mwd(MwdError::AllInvalid)
        ));
    }

    #[test]
    fn fully_valid_map_omits_the_mask_section() {
        let map = synth_map(5, 32, 32, 0.0);
        let bytes = encode_depth(&map, &PipelineConfig::default(), None).unwrap();
        let (header, _) = parse_header(&bytes).unwrap();
        assert!(!header.mask_present);
        assert_eq!(header.section_lens.len(), 3);
        let dec = decode_bytes(&bytes).unwrap();
        assert_eq!(dec.depth.valid_count(), 32 * 32);
    }

    #[test]
    fn adaptive_quantization_round_trips() {
        let map = synth_map(31, 48, 48, 0.03);
        let cfg = PipelineConfig {
            adaptive: Some(AdaptivePolicy {
                patch: 8,
                bit_lo: 3,
                bit_hi: 6,
            }),
            ..PipelineConfig::default()
        };
        let bytes = encode_depth(&map, &cfg, None).unwrap();
        let (header, _) = parse_header(&bytes).unwrap();
        assert!(header.adaptive_present);
        assert_eq!(header.bits, (6, 6, 6));

        let dec = decode_bytes(&bytes).unwrap();
        let (working, params, _) = prescale_depth(&map, cfg.period, 3).unwrap();
        let img = mwd_encode(&working, &params, 3).unwrap();
        let (q, amap) = adaptive_quantize(&img, 8, 3, 6).unwrap();
        match &dec.payload {
            DecodedPayload::Baseline { planes, adaptive } => {
                assert_eq!(planes, &q);
                assert_eq!(adaptive.as_ref(), Some(&amap));
            }
            other => panic!("expected baseline payload, got {other:?}"),
        }
        assert_eq!(dec.depth.valid, map.valid);
    }

    #[test]
    fn learned_codec_round_trips_latents_bitwise() {
        let map = synth_map(41, 40, 24, 0.05);
        let cfg = PipelineConfig {
            codec: CodecId::Learned,
            ..PipelineConfig::default()
        };
        let mut model = tiny_model(7);
        let bytes = encode_depth(&map, &cfg, Some(&mut model)).unwrap();
        let again = encode_depth(&map, &cfg, Some(&mut model)).unwrap();
        assert_eq!(bytes, again, "learned encoding must be deterministic");

        // independent recomputation of the latents the encoder coded
        let (working, params, _) = prescale_depth(&map, cfg.period, 4).unwrap();
        let img = mwd_encode(&working, &params, 4).unwrap();
        let img_q = dequantize_mwd(&quantize_mwd(&img, cfg.bits).unwrap(), &params).unwrap();
        let x = pad_to_multiple(&image_to_array(&img_q), TOTAL_STRIDE);
        let y = model.analysis_forward(&x, false);
        let z = model.hyper_analysis_forward(&y, false);
        let coded = encode_latents(&mut model, &y, &z).unwrap();

        let dec = decode_bytes(&bytes).unwrap();
        match &dec.payload {
            DecodedPayload::Learned { y_hat, z_hat } => {
                assert_eq!(y_hat, &coded.y_hat, "y lattice points must match bitwise");
                assert_eq!(z_hat, &coded.z_hat, "z lattice points must match bitwise");
            }
            other => panic!("expected learned payload, got {other:?}"),
        }
        assert_eq!(dec.depth.valid, map.valid);
        assert_eq!(dec.depth.values.dim(), map.values.dim());
        assert!(dec.depth.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn learned_codec_without_model_is_refused() {
        let map = synth_map(2, 32, 32, 0.0);
        let cfg = PipelineConfig {
            codec: CodecId::Learned,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            encode_depth(&map, &cfg, None).unwrap_err(),
            ContainerError::ModelRequired
        ));
    }

    #[test]
    fn file_wrappers_add_path_context() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("map.df32");
        let map = synth_map(17, 40, 32, 0.1);
        crate::depth::write_raw_f32(&input, &map, 1.0).unwrap();

        let cfg = PipelineConfig::default();
        let opts = IngestOptions::default();
        let bytes = encode_file(&input, &cfg, &opts, None).unwrap();
        // f32 ingestion loses a little precision, so sizes may differ from
        // the in-memory encode; the container itself must still decode
        let container = dir.path().join("map.dtcm");
        fs::write(&container, &bytes).unwrap();
        let dec = decode_file(&container).unwrap();
        assert_eq!(dec.depth.valid, map.valid);

        let missing = dir.path().join("nope.df32");
        match encode_file(&missing, &cfg, &opts, None).unwrap_err() {
            ContainerError::File { path, .. } => assert_eq!(path, missing),
            other => panic!("expected path context, got {other:?}"),
        }
    }

    #[test]
    fn png16_ingestion_encodes_with_sentinel_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.png");
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(32, 32);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let t = (x as f64 / 31.0 + y as f64 / 31.0) * 0.5;
            *p = image::Luma([(2000.0 + 3000.0 * (t * TAU).sin().abs()) as u16]);
        }
        img.put_pixel(5, 7, image::Luma([0]));
        img.save(&path).unwrap();

        let bytes = encode_file(
            &path,
            &PipelineConfig::default(),
            &IngestOptions {
                png_scale: 0.001,
                png_sentinel: Some(0),
            },
            None,
        )
        .unwrap();
        let dec = decode_bytes(&bytes).unwrap();
        assert!(!dec.depth.valid[[7, 5]]);
        assert_eq!(dec.depth.valid_count(), 32 * 32 - 1);
    }
}
