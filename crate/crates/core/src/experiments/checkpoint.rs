//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "SDMC"  u16 version  u32 meta_len  meta_len bytes of JSON metadata
//! u32 n_records, then per registry entry:
//!   u32 id_len  id (UTF-8)
//!   u8 flags            bit 0: bias present, bit 1: mask present
//!   u32 rank  rank × u64 extents
//!   numel × f64 weight  numel × f64 first moment  numel × f64 second moment
//!   if mask:  u64 byte_len  byte_len bytes of LSB-first bitset
//!   if bias:  u64 len  len × f64 bias  len × f64 m  len × f64 v
//! ```
//!
//! The metadata carries the experiment config, the optimizer step and the
//! data standardization, so a checkpoint alone suffices to sample or resume.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::datasets::Standardization;
use crate::models::{Denoiser, ParamRegistry};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::topology::{LayerMask, SparsityMask};
use crate::training::{Moments, OptimizerState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SDMC";
pub const CHECKPOINT_VERSION: u16 = 1;

const FLAG_BIAS: u8 = 1;
const FLAG_MASK: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub standardization: Standardization,
    pub model: Denoiser,
    pub mask: Option<SparsityMask>,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ExperimentConfig,
    step: u64,
    standardization: Standardization,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Little-endian reader that reports which field ran out of bytes.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Malformed(format!("{what} {v} does not fit in memory")))
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let registry = self.model.registry();
        if self.optimizer.moments.len() != registry.len() {
            return Err(Error::Dimension("optimizer moments do not match the registry".into()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&Meta {
            config: self.config.clone(),
            step: self.optimizer.step,
            standardization: self.standardization.clone(),
        })?;
        put_u32(&mut out, meta.len());
        out.extend_from_slice(&meta);
        put_u32(&mut out, registry.len());
        for (entry, mom) in registry.entries().iter().zip(&self.optimizer.moments) {
            let mask = self.mask.as_ref().and_then(|m| m.get(&entry.layer_id));
            put_u32(&mut out, entry.layer_id.len());
            out.extend_from_slice(entry.layer_id.as_bytes());
            let mut flags = 0;
            if entry.bias.is_some() {
                flags |= FLAG_BIAS;
            }
            if mask.is_some() {
                flags |= FLAG_MASK;
            }
            out.push(flags);
            put_u32(&mut out, entry.weight.shape().len());
            for &d in entry.weight.shape() {
                put_u64(&mut out, d);
            }
            put_f64s(&mut out, entry.weight.values());
            put_f64s(&mut out, &mom.m_weight);
            put_f64s(&mut out, &mom.v_weight);
            if let Some(mask) = mask {
                let bits = mask.to_bytes();
                put_u64(&mut out, bits.len());
                out.extend_from_slice(&bits);
            }
            if let Some(bias) = &entry.bias {
                put_u64(&mut out, bias.numel());
                put_f64s(&mut out, bias.values());
                put_f64s(&mut out, mom.m_bias.as_deref().unwrap_or_default());
                put_f64s(&mut out, mom.v_bias.as_deref().unwrap_or_default());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = r.u32("metadata length")?;
        let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
        meta.config.validate()?;

        // The layout comes from the config; the file supplies every value.
        let spec = meta.config.denoiser_spec();
        let template = Denoiser::init(spec.clone(), &mut Rng::new(0))?;
        let mut registry: ParamRegistry = template.registry().clone();
        let n_records = r.u32("record count")?;
        if n_records != registry.len() {
            return Err(Error::Malformed(format!(
                "{n_records} records for a model with {} entries",
                registry.len()
            )));
        }
        let mut moments = Vec::with_capacity(n_records);
        let mut masks = Vec::new();
        for entry in registry.entries_mut() {
            let id_len = r.u32("layer id length")?;
            let id = std::str::from_utf8(r.take(id_len, "layer id")?)
                .map_err(|_| Error::Malformed("layer id is not UTF-8".into()))?;
            if id != entry.layer_id {
                return Err(Error::Malformed(format!(
                    "expected layer {}, found {id}",
                    entry.layer_id
                )));
            }
            let flags = r.u8("flags")?;
            let rank = r.u32("rank")?;
            let shape = (0..rank).map(|_| r.u64("extent")).collect::<Result<Vec<_>>>()?;
            if shape != entry.weight.shape() {
                return Err(Error::Malformed(format!(
                    "layer {id} has shape {shape:?}, model expects {:?}",
                    entry.weight.shape()
                )));
            }
            let n = entry.weight.numel();
            let weight = r.f64s(n, "weights")?;
            let m_weight = r.f64s(n, "first moments")?;
            let v_weight = r.f64s(n, "second moments")?;
            entry.weight = Tensor::new(shape, weight)?;
            if flags & FLAG_MASK != 0 {
                let len = r.u64("mask length")?;
                let bits = r.take(len, "mask")?;
                masks.push(LayerMask::from_bytes(id, bits, n)?);
            }
            let (mut m_bias, mut v_bias) = (None, None);
            if (flags & FLAG_BIAS != 0) != entry.bias.is_some() {
                return Err(Error::Malformed(format!("bias presence mismatch in layer {id}")));
            }
            if let Some(bias) = &mut entry.bias {
                let len = r.u64("bias length")?;
                if len != bias.numel() {
                    return Err(Error::Malformed(format!("layer {id} bias length {len}")));
                }
                *bias = Tensor::new(bias.shape().to_vec(), r.f64s(len, "bias")?)?;
                m_bias = Some(r.f64s(len, "bias first moments")?);
                v_bias = Some(r.f64s(len, "bias second moments")?);
            }
            moments.push(Moments {
                m_weight,
                v_weight,
                m_bias,
                v_bias,
            });
        }
        r.finish()?;

        let maskable = registry.maskable_geoms();
        let mask = if masks.is_empty() {
            None
        } else {
            let ids: Vec<&str> = masks.iter().map(LayerMask::layer_id).collect();
            let expected: Vec<&str> = maskable.iter().map(|g| g.layer_id.as_str()).collect();
            if ids != expected {
                return Err(Error::Malformed(format!(
                    "masks cover {ids:?}, maskable layers are {expected:?}"
                )));
            }
            Some(SparsityMask::new(masks))
        };
        Ok(Checkpoint {
            optimizer: OptimizerState {
                config: meta.config.optimizer(),
                step: meta.step,
                moments,
            },
            config: meta.config,
            standardization: meta.standardization,
            model: Denoiser::from_parts(spec, registry)?,
            mask,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// SHA-256 over every weight and bias value in registry order.
pub fn weights_digest(registry: &ParamRegistry) -> String {
    let mut h = Sha256::new();
    for e in registry.entries() {
        h.update(e.layer_id.as_bytes());
        for v in e.weight.values() {
            h.update(v.to_le_bytes());
        }
        if let Some(b) = &e.bias {
            for v in b.values() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}
