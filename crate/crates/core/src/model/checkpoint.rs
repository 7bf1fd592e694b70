//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "FCNN3DCK"
//! version      u32       1
//! header_len   u32
//! header       UTF-8     key=value lines: architecture and training state
//! count        u32       number of tensors
//! per tensor:
//!   name_len   u16
//!   name       UTF-8
//!   rank       u8
//!   dims       rank × u32
//!   data       product(dims) × f32
//! ```

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Architecture, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FCNN3DCK";
pub const VERSION: u32 = 1;

/// Where training stood when the checkpoint was written.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainingMeta {
    /// Last completed epoch, 1-based; 0 for an untrained model.
    pub epoch: u32,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
}

pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: TrainingMeta,
}

pub fn to_bytes(model: &Model<f32>, meta: &TrainingMeta) -> Vec<u8> {
    let mut header = String::new();
    for (k, v) in model.architecture().to_pairs() {
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str(&format!("epoch={}\nseed={}\nstep={}\n", meta.epoch, meta.seed, meta.step));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let buffers = model.buffers();
    out.extend_from_slice(&(buffers.len() as u32).to_le_bytes());
    for (name, t) in buffers {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str, CheckpointError> {
        std::str::from_utf8(self.take(n)?).map_err(|e| CheckpointError::Malformed(format!("invalid UTF-8: {e}")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let header_len = r.u32()? as usize;
    let header = r.utf8(header_len)?;
    let mut pairs = Vec::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Malformed(format!("header line {line:?}")))?;
        pairs.push((k, v));
    }
    let arch = Architecture::from_pairs(pairs.iter().copied())
        .map_err(|e| CheckpointError::Malformed(format!("architecture: {e}")))?;
    let field = |key: &str| -> Result<u64> {
        let v = pairs
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| CheckpointError::Malformed(format!("header lacks {key}")))?
            .1;
        v.parse()
            .map_err(|_| CheckpointError::Malformed(format!("{key}={v}")).into())
    };
    let meta = TrainingMeta {
        epoch: u32::try_from(field("epoch")?).map_err(|_| CheckpointError::Malformed("epoch".into()))?,
        seed: field("seed")?,
        step: field("step")?,
    };

    let mut model = Model::<f32>::build(arch, 0)
        .map_err(|e| CheckpointError::Malformed(format!("architecture: {e}")))?;
    let count = r.u32()? as usize;
    let expected = model.buffers().len();
    if count != expected {
        return Err(CheckpointError::Malformed(format!("{count} tensors, expected {expected}")).into());
    }
    let mut filled = vec![false; expected];
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.utf8(name_len)?.to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| CheckpointError::Malformed(format!("{name}: dims overflow")))?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();

        let mut slots = model.buffers_mut();
        let idx = slots
            .iter()
            .position(|(slot, _)| *slot == name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unexpected tensor {name:?}")))?;
        let target = &mut slots[idx].1;
        if target.shape() != dims.as_slice() {
            return Err(CheckpointError::Malformed(format!(
                "{name}: shape {dims:?}, expected {:?}",
                target.shape()
            ))
            .into());
        }
        if filled[idx] {
            return Err(CheckpointError::Malformed(format!("duplicate tensor {name:?}")).into());
        }
        **target = Tensor::from_vec(&dims, data)?;
        filled[idx] = true;
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    Ok(Checkpoint { model, meta })
}

pub fn save(model: &Model<f32>, meta: &TrainingMeta, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
