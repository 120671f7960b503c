//! The 32-byte-per-Gaussian `.splat` layout used by web viewers:
//! position `3×f32`, linear scale `3×f32`, RGBA `4×u8`, quaternion `4×u8`
//! (`w, x, y, z`, each mapped from `[-1, 1]` onto `[0, 255]`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::SH_C0;

use super::RawGaussianRecord;

pub const SPLAT_RECORD_BYTES: usize = 32;

/// Opacities decoded from bytes are kept this far away from 0 and 1.
const ALPHA_CLAMP: f64 = 1.0 / 512.0;

fn f32_at(b: &[u8], at: usize) -> f64 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as f64
}

pub fn decode_splat_record(b: &[u8; SPLAT_RECORD_BYTES], index: usize) -> Result<RawGaussianRecord> {
    let position = [f32_at(b, 0), f32_at(b, 4), f32_at(b, 8)];
    let scale = [f32_at(b, 12), f32_at(b, 16), f32_at(b, 20)];
    if let Some(s) = scale.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::format(format!(
            "splat record {index}: scale {s} is not positive"
        )));
    }
    let log_scale = scale.map(f64::ln);
    let sh_dc = [b[24], b[25], b[26]].map(|c| (c as f64 / 255.0 - 0.5) / SH_C0);
    let alpha = (b[27] as f64 / 255.0).clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
    let logit_opacity = (alpha / (1.0 - alpha)).ln();
    let rotation = [b[28], b[29], b[30], b[31]].map(|q| (q as f64 - 128.0) / 128.0);

    let record = RawGaussianRecord {
        position,
        log_scale,
        rotation,
        logit_opacity,
        sh_dc,
        sh_rest: Vec::new(),
    };
    record.validate(index)?;
    Ok(record)
}

pub fn encode_splat_record(r: &RawGaussianRecord) -> [u8; SPLAT_RECORD_BYTES] {
    let mut out = [0u8; SPLAT_RECORD_BYTES];
    let floats = r.position.iter().chain(r.log_scale.map(f64::exp).iter()).copied().collect::<Vec<_>>();
    for (k, v) in floats.iter().enumerate() {
        out[k * 4..k * 4 + 4].copy_from_slice(&(*v as f32).to_le_bytes());
    }
    let byte = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    for c in 0..3 {
        out[24 + c] = byte((0.5 + SH_C0 * r.sh_dc[c]) * 255.0);
    }
    out[27] = byte(255.0 / (1.0 + (-r.logit_opacity).exp()));
    for c in 0..4 {
        out[28 + c] = byte(r.rotation[c] * 128.0 + 128.0);
    }
    out
}

pub fn parse_splat(bytes: &[u8]) -> Result<Vec<RawGaussianRecord>> {
    let remainder = bytes.len() % SPLAT_RECORD_BYTES;
    if remainder != 0 {
        return Err(Error::format(format!(
            ".splat length {} is not a multiple of {SPLAT_RECORD_BYTES} (remainder {remainder})",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(SPLAT_RECORD_BYTES)
        .enumerate()
        .map(|(i, chunk)| decode_splat_record(chunk.try_into().unwrap(), i))
        .collect()
}

pub fn load_gaussians_splat(path: impl AsRef<Path>) -> Result<Vec<RawGaussianRecord>> {
    parse_splat(&super::ply::read_file(path.as_ref())?)
}

pub fn encode_splat(records: &[RawGaussianRecord]) -> Vec<u8> {
    records.iter().flat_map(encode_splat_record).collect()
}
