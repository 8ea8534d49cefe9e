//! Model checkpoints: a fixed header naming the architecture, then every
//! parameter as little-endian f64 in the model's flat visiting order.
//!
//! Layout: `"DTCK"` | version u8 | c_mid u32 | c_y u32 | c_z u32 |
//! window u32 | n_params u64 | n_params × f64, all little-endian.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::model::{CodecConfig, CodecModel};
use super::nn::Params;
use super::CodecError;

const MAGIC: &[u8; 4] = b"DTCK";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 * 4 + 8;

/// Serializes the model to the checkpoint byte format. Takes `&mut`
/// because parameter traversal is only defined through the mutable
/// visitor; the model is not modified.
pub fn serialize_model(model: &mut CodecModel) -> Vec<u8> {
    let n = model.param_count();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [
        model.cfg.c_mid,
        model.cfg.c_y,
        model.cfg.c_z,
        model.cfg.window,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(n as u64).to_le_bytes());
    model.for_each_param(&mut |p, _| out.extend_from_slice(&p.to_le_bytes()));
    out
}

/// Reconstructs a model from checkpoint bytes, validating the header and
/// the parameter payload exactly.
pub fn parse_model(bytes: &[u8]) -> Result<CodecModel, CodecError> {
    let bad = |msg: String| CodecError::BadCheckpoint(msg);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!(
            "unsupported version {} (expected {VERSION})",
            bytes[4]
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let cfg = CodecConfig {
        c_mid: u32_at(5) as usize,
        c_y: u32_at(9) as usize,
        c_z: u32_at(13) as usize,
        window: u32_at(17) as usize,
    };
    if cfg.c_mid == 0 || cfg.c_y == 0 || cfg.c_z == 0 || cfg.window == 0 {
        return Err(bad(format!("degenerate architecture {cfg:?}")));
    }
    let n_stored = u64::from_le_bytes(bytes[21..29].try_into().unwrap()) as usize;

    let mut model = CodecModel::new(cfg, &mut ChaCha20Rng::seed_from_u64(0))?;
    let n_arch = model.param_count();
    if n_stored != n_arch {
        return Err(bad(format!(
            "parameter count {n_stored} does not match architecture ({n_arch})"
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != n_arch * 8 {
        return Err(bad(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            n_arch * 8
        )));
    }
    let mut finite = true;
    let mut i = 0;
    model.for_each_param(&mut |p, _| {
        *p = f64::from_le_bytes(payload[i * 8..i * 8 + 8].try_into().unwrap());
        finite &= p.is_finite();
        i += 1;
    });
    if !finite {
        return Err(bad("non-finite parameter value".to_string()));
    }
    Ok(model)
}

pub fn save_model(model: &mut CodecModel, path: impl AsRef<Path>) -> Result<(), CodecError> {
    Ok(std::fs::write(path, serialize_model(model))?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CodecModel, CodecError> {
    parse_model(&std::fs::read(path)?)
}
