//! Single-file tensor archive: an 8-byte magic, a little-endian `u64`
//! header length, a JSON header, then every tensor as little-endian `f32`.

use std::fs;
use std::path::Path;

use autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::{build, ArchSpec, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CDSGARC1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(meta: &serde_json::Value, tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.numel();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Archive> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a tensor archive"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(format!("header: {e}")))?;
    let payload = &bytes[body..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let (lo, hi) = (4 * e.offset, 4 * (e.offset + n));
        let raw = payload.get(lo..hi).ok_or_else(|| bad(format!("truncated tensor {}", e.name)))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(Archive {
        meta: header.meta,
        tensors,
    })
}

pub fn write(path: &Path, meta: &serde_json::Value, tensors: &[(String, Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("partial");
    fs::write(&tmp, encode(meta, tensors)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Archive> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Current parameter values of `net`, in parameter order.
pub fn snapshot(net: &dyn Network) -> Vec<(String, Tensor)> {
    net.parameters().iter().map(|(n, v)| (n.clone(), v.value())).collect()
}

/// Overwrite parameters from `(name, tensor)` pairs that must match the
/// network's names and shapes exactly and in order.
pub fn restore(net: &dyn Network, tensors: &[(String, Tensor)]) -> Result<()> {
    let params = net.parameters();
    if params.len() != tensors.len() {
        return Err(bad(format!(
            "archive has {} tensors, network has {} parameters",
            tensors.len(),
            params.len()
        )));
    }
    for ((pn, pv), (tn, t)) in params.iter().zip(tensors) {
        if pn != tn || pv.shape() != t.shape() {
            return Err(bad(format!(
                "parameter {pn} {:?} does not match archived {tn} {:?}",
                pv.shape(),
                t.shape()
            )));
        }
    }
    for ((_, pv), (_, t)) in params.iter().zip(tensors) {
        pv.set_value(t.clone())?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct NetworkMeta {
    arch: ArchSpec,
    step: u64,
}

pub fn save_network(net: &dyn Network, step: u64, path: &Path) -> Result<()> {
    let meta = serde_json::to_value(NetworkMeta {
        arch: net.spec().clone(),
        step,
    })?;
    write(path, &meta, &snapshot(net))
}

/// Rebuild the architecture named in the archive and load its weights.
pub fn load_network(path: &Path) -> Result<(Box<dyn Network>, u64)> {
    let archive = read(path)?;
    let meta: NetworkMeta =
        serde_json::from_value(archive.meta).map_err(|e| bad(format!("network header: {e}")))?;
    let net = build(&meta.arch, 0)?;
    restore(net.as_ref(), &archive.tensors)?;
    Ok((net, meta.step))
}
