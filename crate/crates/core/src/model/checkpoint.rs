//! Fixed-layout binary checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "KUTRALNT" | version | metadata length | metadata (UTF-8 JSON)
//! tensor count | per tensor: name length | name | 4 extents | f32 values
//! ```
//!
//! Tensors are written in parameter-store order, running statistics included.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::model::graph::ModelGraph;
use crate::model::zoo::{build_model, ModelConfig, Variant};
use crate::tensor::Shape;

pub const MAGIC: &[u8; 8] = b"KUTRALNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    variant: String,
    config: ModelConfig,
    config_hash: String,
}

pub fn write_checkpoint<W: Write>(model: &ModelGraph<f32>, mut out: W) -> Result<()> {
    let meta = Metadata {
        variant: model.variant().name().to_string(),
        config: model.config().clone(),
        config_hash: format!("{:016x}", model.config().hash()),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, len_u32(meta.len())?);
    buf.extend_from_slice(&meta);
    put_u32(&mut buf, len_u32(model.params().len())?);
    for (_, p) in model.params().iter() {
        put_u32(&mut buf, len_u32(p.name.len())?);
        buf.extend_from_slice(p.name.as_bytes());
        for d in p.tensor.shape().dims() {
            put_u32(&mut buf, len_u32(d)?);
        }
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint(model: &ModelGraph<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Parses a checkpoint and rebuilds the model its metadata describes.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelGraph<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph<f32>> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and checks that it holds the `expected` variant.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: Variant) -> Result<ModelGraph<f32>> {
    let model = load_checkpoint(path)?;
    if model.variant() != expected {
        return Err(CheckpointError::VariantMismatch {
            found: model.variant().name().into(),
            expected: expected.name().into(),
        }
        .into());
    }
    Ok(model)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| CheckpointError::CorruptHeader(format!("length {n} exceeds u32")).into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::TruncatedPayload(what.to_string())),
        }
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode(bytes: &[u8]) -> Result<ModelGraph<f32>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let header = |e: CheckpointError| match e {
        CheckpointError::TruncatedPayload(_) => CheckpointError::CorruptHeader("header ends early".into()),
        other => other,
    };
    let version = cur.u32("version").map_err(header)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let meta_len = cur.u32("metadata length").map_err(header)? as usize;
    let meta_bytes = cur.take(meta_len, "metadata").map_err(header)?;
    let meta: Metadata =
        serde_json::from_slice(meta_bytes).map_err(|e| CheckpointError::CorruptHeader(format!("metadata: {e}")))?;
    if meta.config_hash != format!("{:016x}", meta.config.hash()) {
        return Err(CheckpointError::CorruptHeader("configuration hash does not match".into()).into());
    }
    let variant: Variant = meta
        .variant
        .parse()
        .map_err(|_| CheckpointError::CorruptHeader(format!("unknown variant {:?}", meta.variant)))?;
    if variant != meta.config.variant {
        return Err(CheckpointError::CorruptHeader("variant disagrees with configuration".into()).into());
    }
    let mut model = build_model::<f32>(&meta.config, 0).map_err(|e| match e {
        Error::Config(m) => CheckpointError::CorruptHeader(m).into(),
        other => other,
    })?;

    let count = cur.u32("tensor count").map_err(header)? as usize;
    let mut seen = vec![false; model.params().len()];
    for _ in 0..count {
        let name_len = cur.u32("tensor name")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::CorruptHeader("tensor name is not UTF-8".into()))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = cur.u32(&name)? as usize;
        }
        let found = Shape::from_dims(dims);
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| CheckpointError::UnexpectedTensor(name.clone()))?;
        let expected = model.params().get(id).shape();
        if found != expected {
            return Err(CheckpointError::ShapeMismatch { name, found, expected }.into());
        }
        let raw = cur.take(found.numel() * 4, &name)?;
        let dst = model.params_mut().get_mut(id).data_mut();
        for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        seen[id.index()] = true;
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::CorruptHeader(format!("{} trailing bytes", bytes.len() - cur.pos)).into());
    }
    if let Some((id, _)) = model.params().iter().find(|(id, _)| !seen[id.index()]) {
        return Err(CheckpointError::MissingTensor(model.params().param(id).name.clone()).into());
    }
    Ok(model)
}
