//! Binary parameter snapshot.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LFDSNAP\0"
//! version  u32      currently 1
//! meta_len u32      followed by meta_len bytes of UTF-8 JSON
//! count    u32      number of tensor entries
//! entry    name_len u32, name bytes, ndim u32, dims u32 x ndim,
//!          prod(dims) x f32
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LFDSNAP\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub meta: Value,
    pub params: ParamSet<f32>,
}

impl Snapshot {
    pub fn new(meta: Value, params: ParamSet<f32>) -> Self {
        Snapshot { meta, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        let mut out = Vec::with_capacity(32 + meta.len() + self.params.num_elements() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a parameter snapshot".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: Value = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(name, Tensor::from_vec(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after snapshot".into()));
        }
        Ok(Snapshot { meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated snapshot"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..40), rows in 1usize..4) {
            let n = values.len() - values.len() % rows;
            prop_assume!(n > 0);
            let mut params = ParamSet::new();
            params.push("a.weight", Tensor::from_vec(&[rows, n / rows], values[..n].to_vec()).unwrap());
            params.push("a.bias", Tensor::from_vec(&[1], vec![values[0]]).unwrap());
            let snap = Snapshot::new(serde_json::json!({"k": 1}), params);
            let back = Snapshot::from_bytes(&snap.to_bytes()).unwrap();
            prop_assert_eq!(back, snap);
        }
    }

    #[test]
    fn header_layout_is_stable() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::from_vec(&[1], vec![1.0f32]).unwrap());
        let bytes = Snapshot::new(Value::Null, params).to_bytes();
        assert_eq!(&bytes[..8], b"LFDSNAP\0");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..20], b"null");
        assert_eq!(&bytes[bytes.len() - 4..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(matches!(Snapshot::from_bytes(b"garbage!xxxx"), Err(Error::Format(_))));
        let mut params = ParamSet::new();
        params.push("w", Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap());
        let bytes = Snapshot::new(Value::Null, params).to_bytes();
        assert!(Snapshot::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
