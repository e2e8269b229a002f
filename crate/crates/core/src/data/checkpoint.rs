//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PNCNNCKP" | version u32 | record count u32
//! record*: name_len u32 | name (UTF-8) | ndim u32 | dims u64* | byte_len u64 | f64 payload
//! CRC32 (IEEE) of everything before it, u32
//! ```
//!
//! Integers that do not fit an `f64` exactly (hash words, RNG position) are
//! stored bit-cast, so every value survives the round trip unchanged.

use crate::error::{Error, Result};
use crate::numerics::rng::RngState;
use crate::numerics::Tensor;
use crate::stack::{ModelParams, ModelSpec};
use crate::train::{Adam, AdamConfig};
use crate::Rng;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PNCNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub model: ModelParams,
    pub optimizer: Adam,
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: u64,
    pub config_hash: [u8; 32],
}

fn bits(v: u64) -> f64 {
    f64::from_bits(v)
}

fn to_records(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let s = &ck.spec;
    let mut out = vec![
        (
            "meta.spec".to_string(),
            Tensor::vector(vec![
                s.dim as f64,
                s.c_in as f64,
                s.channels as f64,
                s.blocks as f64,
                s.terms as f64,
                s.classes as f64,
                s.lambda,
                s.spacing,
            ]),
        ),
        ("meta.epoch".to_string(), Tensor::vector(vec![bits(ck.epoch)])),
        (
            "meta.config_hash".to_string(),
            Tensor::vector(ck.config_hash.chunks(8).map(|c| bits(u64::from_le_bytes(c.try_into().unwrap()))).collect()),
        ),
        (
            "meta.rng".to_string(),
            Tensor::vector(vec![
                bits(ck.rng.seed),
                bits(ck.rng.stream),
                bits(ck.rng.word_pos as u64),
                bits((ck.rng.word_pos >> 64) as u64),
            ]),
        ),
        ("model.lambda".to_string(), Tensor::scalar(ck.model.lambda)),
    ];
    let c = ck.optimizer.config;
    out.push(("adam.state".to_string(), Tensor::vector(vec![bits(ck.optimizer.step), c.lr, c.beta1, c.beta2, c.eps])));
    let names: Vec<String> = ck.model.tensors().into_iter().map(|(n, _)| n).collect();
    for (n, t) in ck.model.tensors() {
        out.push((format!("param.{n}"), t));
    }
    for (n, t) in names.iter().zip(&ck.optimizer.m) {
        out.push((format!("adam.m.{n}"), t.clone()));
    }
    for (n, t) in names.iter().zip(&ck.optimizer.v) {
        out.push((format!("adam.v.{n}"), t.clone()));
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let records = to_records(ck);
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in &records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&((t.len() * 8) as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptPayload(format!("record runs past the end at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptPayload("missing checkpoint header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::CorruptPayload("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let count = r.u32()?;
    let mut records = std::collections::HashMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::CorruptPayload(e.to_string()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let byte_len = r.u64()? as usize;
        if byte_len != 8 * shape.iter().product::<usize>() {
            return Err(Error::CorruptPayload(format!("record {name}: {byte_len} bytes for shape {shape:?}")));
        }
        let data = r.take(byte_len)?.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        records.insert(name, Tensor::from_shape(&shape, data));
    }
    if r.pos != body.len() {
        return Err(Error::CorruptPayload("trailing bytes after the last record".into()));
    }
    from_records(records)
}

fn from_records(mut rec: std::collections::HashMap<String, Tensor>) -> Result<Checkpoint> {
    let mut get = |name: &str, len: usize| -> Result<Tensor> {
        let t = rec.remove(name).ok_or_else(|| Error::CorruptPayload(format!("missing record {name}")))?;
        if len != usize::MAX && t.len() != len {
            return Err(Error::CorruptPayload(format!("record {name} has {} values, expected {len}", t.len())));
        }
        Ok(t)
    };
    let s = get("meta.spec", 8)?.into_data();
    let spec = ModelSpec {
        dim: s[0] as usize,
        c_in: s[1] as usize,
        channels: s[2] as usize,
        blocks: s[3] as usize,
        terms: s[4] as usize,
        classes: s[5] as usize,
        lambda: s[6],
        spacing: s[7],
    };
    let epoch = get("meta.epoch", 1)?.data()[0].to_bits();
    let mut config_hash = [0u8; 32];
    for (i, w) in get("meta.config_hash", 4)?.data().iter().enumerate() {
        config_hash[8 * i..8 * i + 8].copy_from_slice(&w.to_bits().to_le_bytes());
    }
    let rw: Vec<u64> = get("meta.rng", 4)?.data().iter().map(|v| v.to_bits()).collect();
    let rng = RngState { seed: rw[0], stream: rw[1], word_pos: rw[2] as u128 | (rw[3] as u128) << 64 };
    let lambda = get("model.lambda", 1)?.item();
    let a = get("adam.state", 5)?.into_data();

    let mut model = ModelParams::init(&spec, &mut Rng::new(0));
    model.lambda = lambda;
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut load = |prefix: &str| -> Result<Vec<Tensor>> {
        names.iter().map(|n| get(&format!("{prefix}{n}"), usize::MAX)).collect()
    };
    let params = load("param.")?;
    let m = load("adam.m.")?;
    let v = load("adam.v.")?;
    model.set_tensors(&params).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let optimizer =
        Adam { config: AdamConfig { lr: a[1], beta1: a[2], beta2: a[3], eps: a[4] }, step: a[0].to_bits(), m, v };
    Ok(Checkpoint { spec, model, optimizer, rng, epoch, config_hash })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
