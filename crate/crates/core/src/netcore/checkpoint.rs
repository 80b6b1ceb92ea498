//! Binary checkpoint: magic `CLADMDL1`, then per tensor
//! `u32 name_len | name | u32 rank | u32 dims[rank] | f32 data`, little-endian.
//!
//! A zero-sized tensor named `meta/fingerprint/<hex>` carries the config
//! fingerprint of the run that produced the weights.

use std::path::Path;

use super::encoder::{Architecture, Encoder, Param};
use crate::error::{CladError, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CLADMDL1";
const FINGERPRINT_PREFIX: &str = "meta/fingerprint/";

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CladError::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f32>) -> Result<()> {
    put_u32(buf, name.len())?;
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, shape.len())?;
    for &d in shape {
        put_u32(buf, d)?;
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode<T: Scalar>(model: &Encoder<T>, fingerprint: Option<&str>) -> Result<Vec<u8>> {
    let mut buf = MAGIC.to_vec();
    for p in model.params() {
        put_tensor(&mut buf, &p.name, &p.shape, p.data.iter().map(|v| v.as_f64() as f32))?;
    }
    if let Some(fp) = fingerprint {
        put_tensor(&mut buf, &format!("{FINGERPRINT_PREFIX}{fp}"), &[0], std::iter::empty())?;
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CladError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decode a checkpoint; the architecture is inferred from tensor shapes.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Encoder<T>, Option<String>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CladError::Checkpoint("bad magic".into()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let mut params = Vec::new();
    let mut fingerprint = None;
    while r.pos < bytes.len() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CladError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank > 8 {
            return Err(CladError::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CladError::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| CladError::Checkpoint("overflow".into()))?)?;
        if let Some(fp) = name.strip_prefix(FINGERPRINT_PREFIX) {
            fingerprint = Some(fp.to_string());
            continue;
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        params.push(Param { name, shape, data });
    }
    let shape_of = |name: &str| -> Result<&Vec<usize>> {
        params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.shape)
            .ok_or_else(|| CladError::Checkpoint(format!("missing tensor {name}")))
    };
    let (c1, c2, c3, fc) = (
        shape_of("conv1.weight")?,
        shape_of("conv2.weight")?,
        shape_of("conv3.weight")?,
        shape_of("fc.weight")?,
    );
    if c1.len() != 4 || c2.len() != 4 || c3.len() != 4 || fc.len() != 2 {
        return Err(CladError::Checkpoint("unexpected weight ranks".into()));
    }
    let arch = Architecture {
        in_channels: c1[1],
        widths: [c1[0], c2[0], c3[0]],
        num_classes: fc[0],
    };
    Ok((Encoder::from_params(arch, params)?, fingerprint))
}

pub fn save<T: Scalar>(model: &Encoder<T>, path: &Path, fingerprint: Option<&str>) -> Result<()> {
    std::fs::write(path, encode(model, fingerprint)?).map_err(|e| CladError::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<(Encoder<T>, Option<String>)> {
    let bytes = std::fs::read(path).map_err(|e| CladError::io(path, e))?;
    decode(&bytes)
}
