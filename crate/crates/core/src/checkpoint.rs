//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"BGNN"  u32 version  u64 step
//! u32 len, config TOML (UTF-8)
//! u32 n_params
//! per parameter: u32 name_len, name, u32 ndim, u64 dims[ndim], u64 n, f64 values[n]
//! ```

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{ensure, Error, Result};
use crate::model::{Model, PRIOR_BUFFER};
use crate::numeric::Tensor;
use crate::proposals::FrequencyPrior;

pub const MAGIC: &[u8; 4] = b"BGNN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config: RunConfig,
    pub params: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.buf.len(), Checkpoint, "truncated at byte {}", self.pos);
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &RunConfig, step: u64) -> Self {
        let params = model.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        Self { version: VERSION, step, config: config.clone(), params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut out, &self.config.to_toml()?);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        ensure!(r.take(4)? == MAGIC, Checkpoint, "bad magic bytes");
        let version = r.u32()?;
        ensure!(version == VERSION, Checkpoint, "unsupported version {version} (expected {VERSION})");
        let step = r.u64()?;
        let config = RunConfig::from_toml(&r.string()?).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            ensure!(len == shape.iter().product::<usize>(), Checkpoint, "parameter {name}: {len} values for shape {shape:?}");
            let data = r.take(len * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        ensure!(r.pos == buf.len(), Checkpoint, "{} trailing bytes", buf.len() - r.pos);
        Ok(Self { version, step, config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn param(&self, name: &str) -> Result<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
    }

    /// Rebuilds the model, taking vocabulary sizes from the stored tensors.
    pub fn to_model(&self) -> Result<Model> {
        let prior = self.param(PRIOR_BUFFER)?;
        ensure!(prior.shape().len() == 3, Checkpoint, "prior buffer of shape {:?}", prior.shape());
        let (ne, slots) = (prior.shape()[0], prior.shape()[2]);
        let visual_dim = self.param("repr.f_u.0.weight")?.rows();
        let prior = FrequencyPrior::from_table(ne, slots, prior.data().to_vec())?;
        let mut model = Model::new(&self.config.model, ne, slots - 1, visual_dim, &prior, 0)?;
        model.store.load_values(&self.params)?;
        Ok(model)
    }
}
