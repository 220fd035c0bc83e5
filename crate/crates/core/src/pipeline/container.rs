//! `.arr` files: an 8-byte little-endian header length, a JSON header, then
//! the row-major little-endian payload. Complex values are stored as
//! interleaved `(re, im)` f64 pairs.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    C64,
    F64,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::C64 => 16,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub layout: String,
    pub byte_order: String,
    pub semantic: String,
}

impl Header {
    pub fn new(dtype: Dtype, shape: &[usize], semantic: &str) -> Self {
        Self {
            dtype,
            shape: shape.to_vec(),
            layout: "row-major".into(),
            byte_order: "little-endian".into(),
            semantic: semantic.into(),
        }
    }

    pub fn payload_len(&self) -> usize {
        self.dtype.size() * self.shape.iter().product::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    C64(ArrayD<Complex64>),
    F64(ArrayD<f64>),
    U8(ArrayD<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayContainer {
    pub semantic: String,
    pub data: ArrayData,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

impl ArrayContainer {
    pub fn c64(data: ArrayD<Complex64>, semantic: &str) -> Self {
        Self { semantic: semantic.into(), data: ArrayData::C64(data) }
    }

    pub fn f64(data: ArrayD<f64>, semantic: &str) -> Self {
        Self { semantic: semantic.into(), data: ArrayData::F64(data) }
    }

    pub fn u8(data: ArrayD<u8>, semantic: &str) -> Self {
        Self { semantic: semantic.into(), data: ArrayData::U8(data) }
    }

    pub fn header(&self) -> Header {
        let (dtype, shape) = match &self.data {
            ArrayData::C64(a) => (Dtype::C64, a.shape()),
            ArrayData::F64(a) => (Dtype::F64, a.shape()),
            ArrayData::U8(a) => (Dtype::U8, a.shape()),
        };
        Header::new(dtype, shape, &self.semantic)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(8 + header.len() + self.header().payload_len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            ArrayData::C64(a) => {
                for v in a.iter() {
                    out.extend_from_slice(&v.re.to_le_bytes());
                    out.extend_from_slice(&v.im.to_le_bytes());
                }
            }
            ArrayData::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ArrayData::U8(a) => out.extend(a.iter().copied()),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .ok_or_else(|| bad("file shorter than the length prefix"))?
            .try_into()
            .expect("eight bytes");
        let hlen = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header length overflows"))?;
        let header_bytes = bytes
            .get(8..8usize.saturating_add(hlen))
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| bad(format!("invalid header: {e}")))?;
        if header.layout != "row-major" || header.byte_order != "little-endian" {
            return Err(bad(format!(
                "unsupported layout {} / byte order {}",
                header.layout, header.byte_order
            )));
        }
        let payload = &bytes[8 + hlen..];
        if payload.len() != header.payload_len() {
            return Err(bad(format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                header.payload_len()
            )));
        }
        let shape = IxDyn(&header.shape);
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("eight bytes"));
        let data = match header.dtype {
            Dtype::C64 => {
                let v = payload.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect();
                ArrayData::C64(ArrayD::from_shape_vec(shape, v).map_err(|e| bad(e.to_string()))?)
            }
            Dtype::F64 => {
                let v = payload.chunks_exact(8).map(f).collect();
                ArrayData::F64(ArrayD::from_shape_vec(shape, v).map_err(|e| bad(e.to_string()))?)
            }
            Dtype::U8 => ArrayData::U8(
                ArrayD::from_shape_vec(shape, payload.to_vec()).map_err(|e| bad(e.to_string()))?,
            ),
        };
        Ok(Self { semantic: header.semantic, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn into_c64(self) -> Result<ArrayD<Complex64>> {
        match self.data {
            ArrayData::C64(a) => Ok(a),
            _ => Err(bad(format!("expected c64 data for `{}`", self.semantic))),
        }
    }

    pub fn into_f64(self) -> Result<ArrayD<f64>> {
        match self.data {
            ArrayData::F64(a) => Ok(a),
            _ => Err(bad(format!("expected f64 data for `{}`", self.semantic))),
        }
    }

    pub fn into_u8(self) -> Result<ArrayD<u8>> {
        match self.data {
            ArrayData::U8(a) => Ok(a),
            _ => Err(bad(format!("expected u8 data for `{}`", self.semantic))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_every_dtype() {
        let c = ArrayD::from_shape_fn(IxDyn(&[2, 3, 1]), |ix| Complex64::new(ix[0] as f64, -(ix[1] as f64) / 3.0));
        let f = ArrayD::from_shape_fn(IxDyn(&[4, 2]), |ix| (ix[0] * 10 + ix[1]) as f64 + 0.1);
        let u = ArrayD::from_shape_fn(IxDyn(&[5]), |ix| ix[0] as u8);
        for a in [ArrayContainer::c64(c, "kspace"), ArrayContainer::f64(f, "image"), ArrayContainer::u8(u, "mask")] {
            let b = ArrayContainer::from_bytes(&a.to_bytes().unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn layout_is_documented_bytes() {
        let a = ArrayContainer::f64(ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -2.0]).unwrap(), "x");
        let bytes = a.to_bytes().unwrap();
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(header["dtype"], "f64");
        assert_eq!(header["shape"], serde_json::json!([2]));
        assert_eq!(&bytes[8 + hlen..16 + hlen], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + hlen + 16);
    }

    #[test]
    fn rejects_malformed_input() {
        let a = ArrayContainer::u8(ArrayD::zeros(IxDyn(&[3])), "m");
        let bytes = a.to_bytes().unwrap();
        assert!(matches!(ArrayContainer::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Container(_))));
        assert!(matches!(ArrayContainer::from_bytes(&bytes[..4]), Err(Error::Container(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(ArrayContainer::from_bytes(&long).is_err());
        assert!(a.into_f64().is_err());
    }
}
