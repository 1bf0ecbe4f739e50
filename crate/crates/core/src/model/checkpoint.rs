//! CM2C checkpoint container.
//!
//! Layout (little-endian): magic `CM2C`, `u32` version, `u32` header length,
//! UTF-8 JSON header `{config, vocab, meta}`, `u32` tensor count, then per
//! tensor `u32` name length, name bytes, `u32` rank, `rank × u32` dims and
//! the `f32` payload in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Vocab};
use crate::autograd::Mat;
use crate::meta::ArtifactMeta;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CM2C";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    #[serde(default)]
    meta: Option<ArtifactMeta>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode_checkpoint(model: &Model, meta: Option<&ArtifactMeta>) -> Result<Vec<u8>> {
    let header = Header { config: model.config.clone(), vocab: model.vocab.clone(), meta: meta.cloned() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params.len());
    for (name, m) in model.params.names().iter().zip(model.params.values()) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, 2);
        put_u32(&mut out, m.rows());
        put_u32(&mut out, m.cols());
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, Option<ArtifactMeta>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a CM2C checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()?;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut model = Model::new(header.config, header.vocab, 0)?;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(Error::Format(format!("checkpoint has {count} tensors, model expects {}", model.params.len())));
    }
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|e| Error::Format(e.to_string()))?.to_string();
        let rank = r.u32()?;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        let id = model.params.by_name(&name).ok_or_else(|| Error::Format(format!("unknown tensor {name}")))?;
        let expect = model.params.get(id).shape();
        if dims != [expect.0, expect.1] {
            return Err(Error::Format(format!("tensor {name}: shape {dims:?}, expected {expect:?}")));
        }
        let payload = r.take(4 * expect.0 * expect.1)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        *model.params.get_mut(id) = Mat::from_vec(expect.0, expect.1, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint(model: &Model, meta: Option<&ArtifactMeta>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<ArtifactMeta>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Rounds every parameter through `f32`, matching what a checkpoint stores.
pub fn round_to_f32(model: &mut Model) {
    for m in model.params.values_mut() {
        for v in m.data_mut() {
            *v = f64::from(*v as f32);
        }
    }
}
