//! `SALC` checkpoint.
//!
//! Layout, little-endian: magic `SALC`, u32 version, u32 length + canonical
//! training config text, u64 epoch, u64 step, u32 tensor count, then per
//! tensor (u32 name length, name, u32 rank, u64 extents, f32 data, u32 CRC of
//! the block), u64 Adam step, Adam first and second moments as f32 in tensor
//! order, two 56-byte generator states (data, latent), and a trailing CRC-32
//! of everything after the version.

use std::fs;
use std::path::Path;

use super::{AdamState, Result, TrainConfig, TrainingError};
use crate::autodiff::Tensor;
use crate::config;
use crate::nn::ModelParams;
use crate::rng::RngState;

const MAGIC: &[u8; 4] = b"SALC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: u64,
    pub step: u64,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub data_rng: RngState,
    pub latent_rng: RngState,
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = config::train_config_text(&ck.config);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&ck.epoch.to_le_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&(ck.params.len() as u32).to_le_bytes());
    for (name, t) in ck.params.iter() {
        let start = out.len();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f32s(&mut out, t.data());
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    out.extend_from_slice(&ck.adam.t.to_le_bytes());
    for m in ck.adam.m.iter().chain(&ck.adam.v) {
        put_f32s(&mut out, m.data());
    }
    ck.data_rng.encode(&mut out);
    ck.latent_rng.encode(&mut out);
    let crc = crc32fast::hash(&out[8..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn fail(&self, what: impl Into<String>, msg: impl Into<String>) -> TrainingError {
        TrainingError::Checkpoint { path: self.path.to_string(), what: what.into(), msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(what, format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.fail(what, "size overflow"))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn str(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        std::str::from_utf8(raw).map_err(|_| self.fail(what, "not utf-8"))
    }

    fn rng(&mut self, what: &str) -> Result<RngState> {
        let raw: &[u8; RngState::ENCODED_LEN] = self.take(RngState::ENCODED_LEN, what)?.try_into().unwrap();
        Ok(RngState::decode(raw))
    }
}

/// Decodes and verifies a checkpoint; per-tensor checksums are checked first
/// so a damaged tensor is reported by name.
pub fn decode_checkpoint(bytes: &[u8], path: &str) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail("magic", "not a SALC checkpoint"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail("version", format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    if bytes.len() < 12 {
        return Err(r.fail("crc", "truncated"));
    }
    r.bytes = &bytes[..bytes.len() - 4];

    let text = r.str("config")?;
    let config = config::parse_train_config(text).map_err(|e| r.fail("config", e.to_string()))?;
    let epoch = r.u64("epoch")?;
    let step = r.u64("step")?;
    let count = r.u32("tensor count")?;
    let mut params = ModelParams::empty(config.arch, config.init, config.seed);
    for i in 0..count {
        let start = r.pos;
        let name = r.str(&format!("tensor #{i} name"))?.to_string();
        let rank = r.u32(&format!("tensor `{name}`"))? as usize;
        if rank > 4 {
            return Err(r.fail(format!("tensor `{name}`"), format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&format!("tensor `{name}`"))? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| r.fail(format!("tensor `{name}`"), "size overflow"))?;
        let data = r.f32s(len, &format!("tensor `{name}`"))?;
        let crc = crc32fast::hash(&r.bytes[start..r.pos]);
        if r.u32(&format!("tensor `{name}`"))? != crc {
            return Err(r.fail(format!("tensor `{name}`"), "checksum mismatch"));
        }
        params
            .insert(name.clone(), Tensor::new(shape, data))
            .map_err(|e| r.fail(format!("tensor `{name}`"), e.to_string()))?;
    }
    let t = r.u64("adam state")?;
    let mut moments = Vec::with_capacity(2 * params.len());
    for _ in 0..2 {
        for (_, p) in params.iter() {
            moments.push(Tensor::new(p.shape().to_vec(), r.f32s(p.len(), "adam state")?));
        }
    }
    let v = moments.split_off(params.len());
    let adam = AdamState { t, m: moments, v };
    let data_rng = r.rng("data rng")?;
    let latent_rng = r.rng("latent rng")?;
    if r.pos != r.bytes.len() {
        return Err(r.fail("layout", format!("{} unexpected trailing bytes", r.bytes.len() - r.pos)));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[8..bytes.len() - 4]) != stored {
        return Err(r.fail("crc", "checksum mismatch"));
    }
    Ok(Checkpoint { config, epoch, step, params, adam, data_rng, latent_rng })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let io = |source| TrainingError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("salc.tmp");
    fs::write(&tmp, encode_checkpoint(ck)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| TrainingError::Io { path: name.clone(), source })?;
    decode_checkpoint(&bytes, &name)
}
