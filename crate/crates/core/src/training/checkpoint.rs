//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "AVEXCKPT"
//! version    u32
//! header     u64 length + UTF-8 JSON {config, spec, fingerprint, step}
//! count      u32 number of arrays
//! per array  u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::corpus::Dataset;
use crate::diffcore::{Array2, ParamStore};
use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelSpec};

pub const MAGIC: &[u8; 8] = b"AVEXCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub fingerprint: String,
    pub step: u64,
    pub params: Vec<(String, Array2)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    spec: ModelSpec,
    fingerprint: String,
    step: u64,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &TrainConfig, fingerprint: &str) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: config.clone(),
            spec: model.spec.clone(),
            fingerprint: fingerprint.to_string(),
            step: model.store.step(),
            params: model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        let mut store = ParamStore::new();
        for (name, value) in &self.params {
            store.add(name.clone(), value.clone())?;
        }
        store.set_step(self.step);
        Model::from_store(self.spec.clone(), store)
    }

    pub fn check_fingerprint(&self, ds: &Dataset) -> Result<()> {
        let fp = ds.fingerprint();
        if fp != self.fingerprint {
            return Err(CheckpointError::FingerprintMismatch {
                checkpoint: self.fingerprint.clone(),
                dataset: fp,
            }
            .into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            spec: self.spec.clone(),
            fingerprint: self.fingerprint.clone(),
            step: self.step,
        })
        .expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, a) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(a.cols() as u64).to_le_bytes());
            for v in a.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = r.u64("header length")?;
        let header_bytes = r.take(header_len, "header")?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        let count = r.u32("array count")?;
        let mut params = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(name_len as u64, "name")?)
                .map_err(|_| CheckpointError::Malformed("array name is not UTF-8".into()))?
                .to_string();
            let rows = r.u64("rows")?;
            let cols = r.u64("cols")?;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape overflows")))?;
            let data = r
                .take(n, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let a = Array2::from_vec(rows as usize, cols as usize, data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            params.push((name, a));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            version,
            config: header.config,
            spec: header.spec,
            fingerprint: header.fingerprint,
            step: header.step,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: u64, what: &str) -> Result<&'a [u8], CheckpointError> {
        let available = (self.bytes.len() - self.pos) as u64;
        if n > available {
            return Err(CheckpointError::Truncated {
                what: what.to_string(),
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}
