//! Versioned weight files.
//!
//! ```text
//! "LTVCCKPT" | version u32 | header_len u32 | TOML header
//! | tensor_count u32 | per tensor: name_len u16 | name | shape 4 x u32 | f32 data
//! ```
//! All integers and samples little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: [u8; 8] = *b"LTVCCKPT";
pub const VERSION: u32 = 1;

/// Distortion measure a checkpoint was optimised for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionMode {
    Mse,
    Msssim,
}

impl std::fmt::Display for DistortionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistortionMode::Mse => "mse",
            DistortionMode::Msssim => "msssim",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub lambda: f64,
    pub lambda_index: u8,
    pub mode: DistortionMode,
    /// Stage that produced the weights.
    pub stage: String,
    pub step: u64,
}

pub fn to_bytes(header: &CheckpointHeader, model: &Model) -> Result<Vec<u8>> {
    if header.model != *model.config() {
        return Err(Error::Contract("checkpoint header does not describe the model".into()));
    }
    let toml = toml::to_string(header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(toml.len() as u32).to_le_bytes());
    out.extend_from_slice(toml.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(CheckpointHeader, Model)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let header: CheckpointHeader =
        toml::from_str(text).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut model = Model::new(&header.model, 0)?;
    let count = c.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, model has {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let n = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(n)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let id = model
            .params
            .id(name)
            .ok_or_else(|| Error::Format(format!("unknown tensor '{name}'")))?;
        let shape = [c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|d| d as usize);
        let t = model.params.get_mut(id);
        if t.shape() != shape {
            return Err(Error::Format(format!("tensor '{name}' is {shape:?}, model expects {:?}", t.shape())));
        }
        let raw = c.take(4 * t.len())?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        seen[id.index()] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Format("checkpoint misses tensors".into()));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
    }
    Ok((header, model))
}

pub fn save(path: &Path, header: &CheckpointHeader, model: &Model) -> Result<()> {
    std::fs::write(path, to_bytes(header, model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Model)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_bytes(&bytes)
}
