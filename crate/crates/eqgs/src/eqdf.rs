//! Descriptor sidecar: `"EQDF"`, `u32` row count, `u32` dimension, then
//! `f32` little-endian values in row-major order.

use std::path::Path;

use eqgs_core::descriptor::ingest_descriptors;
use eqgs_core::geometry::PointCloud;

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"EQDF";

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFile {
    pub count: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

pub fn decode_eqdf(bytes: &[u8], origin: &Path) -> Result<DescriptorFile> {
    let bad = |m: String| CliError::format(origin, m);
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing EQDF header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (count, dim) = (u32_at(4), u32_at(8));
    let expected = count
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| bad("descriptor size overflows".into()))?;
    if bytes.len() - 12 != expected {
        return Err(bad(format!("{count}x{dim} descriptors need {expected} bytes, found {}", bytes.len() - 12)));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(DescriptorFile { count, dim, values })
}

pub fn encode_eqdf(d: &DescriptorFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * d.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(d.count as u32).to_le_bytes());
    out.extend_from_slice(&(d.dim as u32).to_le_bytes());
    for v in &d.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_eqdf(path: &Path) -> Result<DescriptorFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_eqdf(&bytes, path)
}

pub fn write_eqdf(path: &Path, d: &DescriptorFile) -> Result<()> {
    std::fs::write(path, encode_eqdf(d)).map_err(|e| CliError::io(path, e))
}

/// Reads a sidecar and attaches it to `pc`.
pub fn attach_descriptors(pc: &PointCloud, path: &Path) -> Result<PointCloud> {
    let d = read_eqdf(path)?;
    if d.count != pc.len() {
        return Err(CliError::format(path, format!("{} descriptor rows for {} points", d.count, pc.len())));
    }
    ingest_descriptors(pc, d.dim, &d.values).map_err(|e| CliError::format(path, e.to_string()))
}
