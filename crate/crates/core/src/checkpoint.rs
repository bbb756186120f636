//! Versioned binary container for named tensors, used for model checkpoints
//! and activation dumps.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SCMTNSR\0"
//! version    u32      currently 1
//! meta_len   u64      length of the JSON metadata block
//! meta       bytes    UTF-8 JSON (model config, training state, ...)
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u64 × rank
//!   data     f64 × product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SCMTNSR\0";
pub const VERSION: u32 = 1;

/// Metadata plus named tensors, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.map_into()));
    }

    /// Tensors converted to `T`.
    pub fn tensors_as<T: Scalar>(&self) -> Vec<(String, Tensor<T>)> {
        self.tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.map_into()))
            .collect()
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a tensor container (bad magic)".into()));
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let meta_len = read_u64(input)? as usize;
        let mut meta = vec![0u8; meta_len];
        input.read_exact(&mut meta)?;
        let meta =
            serde_json::from_slice(&meta).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = read_u32(input)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(input)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|e| Error::Format(format!("tensor name: {e}")))?;
            let rank = read_u32(input)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 8];
            input.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
