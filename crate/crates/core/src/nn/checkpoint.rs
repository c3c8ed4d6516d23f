//! Checkpoint container.
//!
//! Layout: the magic `FGCK`, a little-endian `u64` header length, a JSON
//! header, then a blob of little-endian `f32` values. The header lists each
//! parameter's name, shape and offset (in elements) into the blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FGCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Free-form role tag, e.g. `pretrain` or `finetune`.
    pub kind: String,
    pub config: serde_json::Value,
    pub fingerprint: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
    #[serde(default)]
    pub params: Vec<ParamEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, params: &ParamSet<f32>) -> Result<()> {
    let mut header = header.clone();
    header.format_version = CHECKPOINT_FORMAT_VERSION;
    header.params.clear();
    let mut offset = 0;
    for p in params.iter() {
        header.params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
        });
        offset += p.tensor.numel();
    }
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let mut blob = Vec::with_capacity(offset * 4);
    for p in params.iter() {
        for x in p.tensor.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&blob).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamSet<f32>)> {
    let io = |e| Error::io("<checkpoint>", e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format_version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
            header.format_version
        )));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(io)?;
    if blob.len() % 4 != 0 {
        return Err(Error::Format("truncated parameter blob".into()));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut params = ParamSet::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Format(format!("parameter `{}` runs past the blob", e.name)))?;
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), slice.to_vec())?)?;
    }
    Ok((header, params))
}

pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, params: &ParamSet<f32>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), header, params)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamSet<f32>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
