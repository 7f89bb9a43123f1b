//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "PSPECKPT"
//! version      u32       1
//! header_len   u32
//! header       JSON      serialized ModelConfig
//! n_records    u32
//! n_records × {
//!     name_len u32, name (UTF-8)
//!     ndim     u32, dims (u64 × ndim)
//!     data     f32 × product(dims), row-major
//! }
//! ```
//!
//! Optimizer state files reuse the same record layout under a different
//! magic string and header.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::weights::TransformerWeights;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSPECKPT";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn write_records(
    magic: &[u8; 8],
    header: &[u8],
    records: &[(String, &Tensor)],
) -> Vec<u8> {
    let payload: usize = records.iter().map(|(_, t)| t.len() * 4 + 64).sum();
    let mut out = Vec::with_capacity(16 + header.len() + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

type NamedTensors = Vec<(String, Tensor)>;

/// Header bytes and named tensors of a record file.
pub(crate) fn read_records(magic: &[u8; 8], buf: &[u8]) -> Result<(Vec<u8>, NamedTensors)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != magic {
        return Err(Error::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header_len = c.u32()? as usize;
    let header = c.take(header_len)?.to_vec();
    let n = c.u32()? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let bytes = c.take(len.checked_mul(4).ok_or_else(|| Error::Format("record too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok((header, records))
}

/// Overwrites every named parameter of `weights` from `records`; each must
/// be present exactly once with the right shape.
pub(crate) fn fill_params(weights: &mut TransformerWeights, records: Vec<(String, Tensor)>) -> Result<()> {
    let mut by_name: std::collections::HashMap<String, Tensor> = records.into_iter().collect();
    for (name, slot) in weights.named_params_mut() {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("missing record {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!(
                "record {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Format(format!("unexpected record {extra}")));
    }
    Ok(())
}

impl TransformerWeights {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.config)?;
        Ok(write_records(CHECKPOINT_MAGIC, &header, &self.named_params()))
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (header, records) = read_records(CHECKPOINT_MAGIC, buf)?;
        let config: ModelConfig = serde_json::from_slice(&header)?;
        let mut weights = TransformerWeights::init(&config, 0)?;
        fill_params(&mut weights, records)?;
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpStyle;

    fn tiny(style: MlpStyle) -> TransformerWeights {
        let c = ModelConfig {
            n_layers: 2,
            d_model: 8,
            d_mlp: 16,
            n_heads: 2,
            vocab_size: 11,
            max_seq: 6,
            mlp_style: style,
            ..ModelConfig::default()
        };
        TransformerWeights::init(&c, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for style in [MlpStyle::TwoMatrix, MlpStyle::ThreeMatrixGated] {
            let w = tiny(style);
            let bytes = w.to_bytes().unwrap();
            let back = TransformerWeights::from_bytes(&bytes).unwrap();
            assert_eq!(back, w);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = tiny(MlpStyle::TwoMatrix).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TransformerWeights::from_bytes(&bad), Err(Error::Format(_))));
        assert!(TransformerWeights::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(TransformerWeights::from_bytes(&long).is_err());
    }
}
