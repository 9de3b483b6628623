//! POAL container: `"POAL"`, version `0x01`, dtype `0x01` (f32 LE), u8 ndim,
//! LE32 dims, raw row-major data.

use std::path::Path;

use crate::error::{PoaError, Result};

pub const MAGIC: &[u8; 4] = b"POAL";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;

pub fn to_bytes(shape: [usize; 3], data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 12 + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, 3]);
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses a POAL payload; only three-dimensional f32 tensors are accepted.
pub fn from_bytes(bytes: &[u8]) -> Result<([usize; 3], Vec<f64>)> {
    let bad = |msg: String| PoaError::ProtocolVersionMismatch(msg);
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(bad("missing POAL magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported POAL version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype tag {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if ndim != 3 {
        return Err(bad(format!("expected 3 dims, header says {ndim}")));
    }
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated shape header".into()));
    }
    let mut shape = [0usize; 3];
    for (i, d) in shape.iter_mut().enumerate() {
        let at = 7 + 4 * i;
        *d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    }
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let body = &bytes[header..];
    if count.and_then(|c| c.checked_mul(4)) != Some(body.len()) {
        return Err(bad(format!(
            "shape {:?} does not match {} payload bytes",
            shape,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((shape, data))
}

pub fn write(path: impl AsRef<Path>, shape: [usize; 3], data: &[f64]) -> Result<()> {
    std::fs::write(path, to_bytes(shape, data))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<([usize; 3], Vec<f64>)> {
    from_bytes(&std::fs::read(path)?)
}
