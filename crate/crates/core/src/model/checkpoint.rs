//! Binary checkpoint container.
//!
//! ```text
//! magic   "RDCK"            4 bytes
//! version u32 LE            currently 1
//! config  u32 LE length + UTF-8 JSON of ModelConfig
//! count   u32 LE            number of tensors
//! tensor* name: u32 length + UTF-8
//!         dtype: u8 (0 = f32, 1 = f64)
//!         ndim: u32, dims: u64 × ndim
//!         values: little-endian, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{DType, ParamSet, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn tag_dtype(t: u8) -> Result<DType> {
    match t {
        0 => Ok(DType::F32),
        1 => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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

fn header(bytes: &[u8]) -> Result<(Reader<'_>, ModelConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg: ModelConfig = serde_json::from_str(&r.string()?)?;
    Ok((r, cfg))
}

/// Precision of the first tensor in a checkpoint, so callers can pick the
/// matching model type before loading.
pub fn read_checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut r, _) = header(&bytes)?;
    if r.u32()? == 0 {
        return Err(Error::Checkpoint("checkpoint holds no tensors".into()));
    }
    r.string()?;
    tag_dtype(r.take(1)?[0])
}

impl<S: Scalar> Model<S> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(dtype_tag(S::DTYPE));
            out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            p.value.data().iter().for_each(|v| v.write_le(&mut out));
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, cfg) = header(bytes)?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = r.string()?;
            let dtype = tag_dtype(r.take(1)?[0])?;
            if dtype != S::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} stored as {dtype:?}, loading as {:?}",
                    S::DTYPE
                )));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let data = raw.chunks(dtype.size()).map(S::read_le).collect();
            params.add(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Model::from_params(&cfg, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
