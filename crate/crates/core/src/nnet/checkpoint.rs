//! Versioned binary checkpoint.
//!
//! Layout (little-endian): magic `FQRBCKPT`, `u32` version, 32-byte config
//! hash, `u32`-length-prefixed descriptor name, `u32` input channels,
//! `u32` classes, `u32` epoch, `u64` seed, `u32` channel count followed by
//! per-channel `f64` means then stds, `u32` tensor count, then per tensor
//! the name, `u32` rank, `u32` dims and raw `f32` values.

use std::fs;
use std::path::Path;

use crate::dataio::NormStats;
use crate::error::{Error, Result};

use super::model::{build_model, Model, ModelDescriptor};
use super::module::{Module, Slot};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FQRBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub in_channels: usize,
    pub num_classes: usize,
    pub epoch: u32,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub norm: NormStats,
    /// Parameters and batch-norm running statistics in visit order.
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &mut Model<f32>,
        epoch: u32,
        seed: u64,
        config_hash: [u8; 32],
        norm: NormStats,
    ) -> Self {
        let mut tensors = Vec::new();
        model.visit("", &mut |name, slot| {
            let (dims, values) = match slot {
                Slot::Param(p) => (p.dims.clone(), p.value.clone()),
                Slot::Buffer { dims, value } => (dims, value.clone()),
            };
            tensors.push(NamedTensor { name, dims, values });
        });
        Self {
            descriptor: model.descriptor().name.clone(),
            in_channels: model.in_channels(),
            num_classes: model.num_classes(),
            epoch,
            seed,
            config_hash,
            norm,
            tensors,
        }
    }

    /// Rebuilds the model and loads every stored tensor by name.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let descriptor: ModelDescriptor = self.descriptor.parse()?;
        let mut model = build_model(&descriptor, self.in_channels, self.num_classes, 0)?;
        let mut idx = 0usize;
        let mut err = None;
        model.visit("", &mut |name, slot| {
            if err.is_some() {
                return;
            }
            let Some(t) = self.tensors.get(idx) else {
                err = Some(Error::invalid(format!("checkpoint lacks tensor `{name}`")));
                return;
            };
            idx += 1;
            let (dims, dst) = match slot {
                Slot::Param(p) => (p.dims.clone(), &mut p.value),
                Slot::Buffer { dims, value } => (dims, value),
            };
            if t.name != name || t.dims != dims {
                err = Some(Error::invalid(format!(
                    "checkpoint tensor `{}` {:?} does not match model slot `{name}` {dims:?}",
                    t.name, t.dims
                )));
                return;
            }
            dst.copy_from_slice(&t.values);
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, model uses {idx}",
                self.tensors.len()
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let u32le = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
        let string = |b: &mut Vec<u8>, s: &str| {
            b.extend_from_slice(&(s.len() as u32).to_le_bytes());
            b.extend_from_slice(s.as_bytes());
        };
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.config_hash);
        string(&mut b, &self.descriptor);
        u32le(&mut b, self.in_channels);
        u32le(&mut b, self.num_classes);
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        u32le(&mut b, self.norm.mean.len());
        for v in self.norm.mean.iter().chain(&self.norm.std) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        u32le(&mut b, self.tensors.len());
        for t in &self.tensors {
            string(&mut b, &t.name);
            u32le(&mut b, t.dims.len());
            for &d in &t.dims {
                u32le(&mut b, d);
            }
            for v in &t.values {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            source,
        };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(source, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                source,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let descriptor = r.string()?;
        let in_channels = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let epoch = r.u32()?;
        let seed = r.u64()?;
        let c = r.u32()? as usize;
        let mut mean = Vec::with_capacity(c);
        for _ in 0..c {
            mean.push(r.f64()?);
        }
        let mut std = Vec::with_capacity(c);
        for _ in 0..c {
            std.push(r.f64()?);
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, dims, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(source, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            descriptor,
            in_channels,
            num_classes,
            epoch,
            seed,
            config_hash,
            norm: NormStats { mean, std },
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.source, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.source, "checkpoint string is not UTF-8"))
    }
}
