//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TATTCKPT"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes (variant, model and train config, vocabulary, its hash)
//! count    u32      number of parameter blocks
//! per block: u32 name length, name bytes, u32 rank, u64 per dim, f64 data
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ModelVariant};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"TATTCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    variant: ModelVariant,
    model: ModelConfig,
    train: TrainConfig,
    vocab_hash: String,
    vocab: Vocabulary,
}

pub fn encode(params: &ModelParams, train: &TrainConfig) -> Result<Vec<u8>> {
    let header = Header {
        variant: params.variant(),
        model: params.config.clone(),
        train: train.clone(),
        vocab_hash: params.vocab.hash(),
        vocab: params.vocab.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.store.len() as u32).to_le_bytes());
    for (_, p) in params.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelParams, TrainConfig)> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(hlen)?)?;
    let vocab = header.vocab.reindex();
    if vocab.hash() != header.vocab_hash {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    if header.model.variant != header.variant {
        return Err(Error::Checkpoint("variant tag disagrees with model config".into()));
    }
    let mut params = ModelParams::new(header.model, vocab)?;
    let count = cur.u32()? as usize;
    if count != params.store.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameter blocks, {} expected for {}",
            params.store.len(),
            header.variant
        )));
    }
    for p in params.store.iter_mut() {
        let nlen = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(nlen)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Checkpoint(format!("expected parameter {}, found {name}", p.name)));
        }
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {shape:?}, expected {:?}",
                p.value.shape()
            )));
        }
        for v in p.value.data_mut() {
            *v = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if header.train.freeze_embeddings {
        params.store.get_mut(params.embedding).trainable = false;
    }
    Ok((params, header.train))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save(path: &Path, params: &ModelParams, train: &TrainConfig) -> Result<()> {
    let bytes = encode(params, train)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
