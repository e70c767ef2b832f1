//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `RKSA`, `u32` version, `u64`-prefixed JSON
//! header (configs, counters, config hash), `u32` tensor count, then per
//! tensor a `u32`-prefixed name, `u32` rows, `u32` cols and three `f64`
//! blocks: value, first and second Adam moment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Rksa;
use crate::params::{Gradients, ParamStore};
use crate::tensor::Matrix;
use crate::train::{Adam, TrainConfig};

pub const MAGIC: &[u8; 4] = b"RKSA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ParamStore,
    pub adam: Adam,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    config_hash: u64,
    epoch: usize,
    step: u64,
    lr: f64,
    adam_t: u64,
}

/// FNV-1a, stable across builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Checkpoint {
    pub fn capture(model: &Rksa, train_config: &TrainConfig, adam: &Adam, epoch: usize, step: u64, lr: f64) -> Self {
        Self {
            model_config: *model.config(),
            train_config: train_config.clone(),
            params: model.params().clone(),
            adam: adam.clone(),
            epoch,
            step,
            lr,
        }
    }

    pub fn model(&self) -> Result<Rksa> {
        Rksa::from_parts(self.model_config, self.params.clone())
    }

    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_string(&(&self.model_config, &self.train_config)).expect("configs serialize");
        fnv1a(json.as_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model_config: self.model_config,
            train_config: self.train_config.clone(),
            config_hash: self.config_hash(),
            epoch: self.epoch,
            step: self.step,
            lr: self.lr,
            adam_t: self.adam.t,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let moments = self.adam.m.tensors().iter().zip(self.adam.v.tensors());
        for ((_, name, value), (m, v)) in self.params.iter().zip(moments) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(value.cols() as u32).to_le_bytes());
            for t in [value, m, v] {
                for x in t.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Corrupt("tensor name is not utf-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let value = r.matrix(rows, cols)?;
            m.push(r.matrix(rows, cols)?);
            v.push(r.matrix(rows, cols)?);
            params.add(name, value);
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut adam = Adam::new(&params);
        adam.t = header.adam_t;
        adam.m = Gradients::from_tensors(m);
        adam.v = Gradients::from_tensors(v);
        let ck = Self {
            model_config: header.model_config,
            train_config: header.train_config,
            params,
            adam,
            epoch: header.epoch,
            step: header.step,
            lr: header.lr,
        };
        if ck.config_hash() != header.config_hash {
            return Err(Error::Corrupt("config hash mismatch".into()));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corrupt("tensor shape overflows".into()))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}
