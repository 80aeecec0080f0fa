//! `TFADV001` weight files: 8-byte magic, architecture id (u8), parameter
//! count (u64), then little-endian `f32` parameters.

use std::fs;
use std::path::Path;

use super::arch::ArchId;
use super::model::Model;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"TFADV001";
const HEADER_LEN: usize = 17;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let params = model.params();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(model.id().id());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("weight file of {} bytes is truncated", bytes.len())));
    }
    if &bytes[..8] != WEIGHTS_MAGIC {
        return Err(Error::Format("bad weight file magic".into()));
    }
    let id = ArchId::from_id(bytes[8]).ok_or_else(|| Error::Format(format!("unknown architecture id {}", bytes[8])))?;
    let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let expected = id.descriptor().param_count();
    if count != expected as u64 {
        return Err(Error::Format(format!("{id} has {expected} parameters but the header says {count}")));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * expected {
        return Err(Error::Format(format!(
            "weight payload is {} bytes, expected {}",
            payload.len(),
            4 * expected
        )));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Model::from_params(id, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
