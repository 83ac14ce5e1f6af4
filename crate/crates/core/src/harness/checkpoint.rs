//! Binary checkpoints.
//!
//! Layout, little-endian: `b"SCKP"`, u32 version, u32 metadata length, the
//! metadata as UTF-8 `key = value` lines (model settings, `step`, `vocab`),
//! u32 parameter count, then per parameter: u32 name length, name, u32 rank,
//! u64 per dimension, u64 offset into the data block (in values). The data
//! block follows: u64 value count, then that many f64.

use std::fs;
use std::path::Path;

use super::config::{parse_key_values, ModelConfig};
use super::model::Model;
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"SCKP";
const VERSION: u32 = 1;

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        detail: detail.into(),
    }
}

pub fn checkpoint_to_bytes(model: &Model, step: usize) -> Vec<u8> {
    let mut meta = String::new();
    for (k, v) in model.config.to_key_values() {
        meta.push_str(&format!("{k} = {v}\n"));
    }
    meta.push_str(&format!("step = {step}\n"));
    meta.push_str(&format!("vocab = {}\n", model.vocab.symbols().join(" ")));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for p in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += p.tensor.numel() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for p in model.store.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| bad("metadata is not UTF-8"))
    }
}

/// Rebuilds the model and returns it with the step it was saved at.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(bad("missing SCKP header"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = r.text(meta_len)?;
    let pairs = parse_key_values(meta, Path::new("<checkpoint metadata>"))?;
    let mut step = 0;
    let mut vocab = None;
    let mut settings = Vec::new();
    for (k, v) in pairs {
        match k.as_str() {
            "step" => step = v.parse().map_err(|_| bad(format!("bad step {v:?}")))?,
            "vocab" => vocab = Some(Vocabulary::new(v.split_whitespace())?),
            _ => settings.push((k, v)),
        }
    }
    let vocab = vocab.ok_or_else(|| bad("metadata lacks a vocabulary"))?;
    let config = ModelConfig::from_key_values(&settings, vocab.len())?;
    let mut model = Model::new(config, vocab, 0)?;

    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(bad(format!(
            "{count} parameter blocks stored, the configured model has {}",
            model.store.len()
        )));
    }
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.text(name_len)?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        index.push((name, shape, offset));
    }
    let total = r.u64()? as usize;
    let data_bytes = r.take(
        total
            .checked_mul(8)
            .ok_or_else(|| bad("value count overflows"))?,
    )?;
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let values: Vec<f64> = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    for (name, shape, offset) in index {
        let numel: usize = shape.iter().product();
        let slice = values
            .get(offset..offset + numel)
            .ok_or_else(|| bad(format!("`{name}` lies outside the data block")))?;
        let expected = model
            .store
            .by_name(&name)
            .ok_or_else(|| bad(format!("unknown parameter `{name}`")))?;
        if expected.tensor.shape() != shape.as_slice() {
            return Err(bad(format!(
                "`{name}` stored as {shape:?}, model expects {:?}",
                expected.tensor.shape()
            )));
        }
        model
            .store
            .set(&name, &Tensor::new(shape, slice.to_vec())?)?;
    }
    Ok((model, step))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, step: usize) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(model, step)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
