//! Bit-exact model serialization: a small versioned header (spec as JSON,
//! charset fingerprint, iteration, optimizer settings) followed by named
//! tensors as little-endian f32, closed by a SHA-256 trailer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_model, Model, ModelError, ModelKind, ModelSpec};
use crate::nncore::{OptimizerConfig, Tensor};
use crate::rng;

const MAGIC: &[u8; 4] = b"LNRC";
const VERSION: u32 = 1;

/// Training bookkeeping carried alongside the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: u64,
    pub optimizer: OptimizerConfig,
    pub charset_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    charset_fingerprint: String,
    iteration: u64,
    optimizer: OptimizerConfig,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

fn named_tensors(model: &Model<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for p in model.params() {
        out.push((p.name.clone(), &p.value));
        out.push((format!("{}#m1", p.name), &p.moment1));
        out.push((format!("{}#m2", p.name), &p.moment2));
    }
    for (name, buf) in model.buffers() {
        out.push((name, buf));
    }
    out
}

pub fn save_checkpoint(
    model: &Model<f32>,
    state: &TrainState,
    path: &Path,
) -> Result<(), ModelError> {
    let header = Header {
        spec: model.spec.clone(),
        charset_fingerprint: state.charset_fingerprint.clone(),
        iteration: state.iteration,
        optimizer: state.optimizer.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serialization cannot fail");
    let tensors = named_tensors(model);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, TrainState), ModelError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 4 + 32 {
        return Err(corrupt(format!("file too small ({} bytes)", bytes.len())));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(corrupt("checksum mismatch"));
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ModelError::VersionMismatch { found: version, supported: VERSION });
    }
    let header_len = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| corrupt(format!("header parse: {e}")))?;

    let tensor_count = cur.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..tensor_count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_string();
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * 4)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)).is_some() {
            return Err(corrupt(format!("duplicate tensor {name:?}")));
        }
    }
    if cur.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - cur.pos)));
    }

    let mut model: Model<f32> =
        build_model(&header.spec, &mut rng::substream(0, "checkpoint-load", 0))?;
    let mut assign = |name: &str, dst: &mut Tensor<f32>| -> Result<(), ModelError> {
        let src = tensors
            .remove(name)
            .ok_or_else(|| corrupt(format!("missing tensor {name:?}")))?;
        if src.shape() != dst.shape() {
            return Err(corrupt(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src;
        Ok(())
    };
    for p in model.params_mut() {
        let name = p.name.clone();
        assign(&name, &mut p.value)?;
        assign(&format!("{name}#m1"), &mut p.moment1)?;
        assign(&format!("{name}#m2"), &mut p.moment2)?;
    }
    for (name, buf) in model.buffers_mut() {
        assign(&name, buf)?;
    }
    if let Some(name) = tensors.keys().next() {
        return Err(corrupt(format!("unexpected tensor {name:?}")));
    }
    let state = TrainState {
        iteration: header.iteration,
        optimizer: header.optimizer,
        charset_fingerprint: header.charset_fingerprint,
    };
    Ok((model, state))
}

/// Load and require a specific architecture, for callers that were asked
/// for one ("--model fcn" on a hybrid checkpoint is a user error).
pub fn load_checkpoint_expecting(
    path: &Path,
    kind: Option<ModelKind>,
) -> Result<(Model<f32>, TrainState), ModelError> {
    let (model, state) = load_checkpoint(path)?;
    if let Some(kind) = kind {
        if model.spec.kind != kind {
            return Err(ModelError::SpecInvalid(format!(
                "checkpoint holds a {} model, expected {}",
                model.spec.kind.name(),
                kind.name()
            )));
        }
    }
    Ok((model, state))
}
