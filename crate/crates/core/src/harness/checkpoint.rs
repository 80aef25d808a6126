//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "OMGA" | version: u32 | count: u32 |
//!   count × ( name_len: u16 | name: utf8 | dtype: u8 | rank: u8 |
//!             rank × dim: u64 | payload )
//! ```
//!
//! dtype 0 is f32 and 1 is f64; payloads are raw little-endian values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Mat, ParamStore};

pub const MAGIC: &[u8; 4] = b"OMGA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            shape,
            data: TensorData::F32(data.into_iter().map(|x| x as f32).collect()),
        }
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            shape,
            data: TensorData::F64(data),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn dtype_code(&self) -> u8 {
        match self.data {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
        }
    }
}

/// Named tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Bundle {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn insert_mat(&mut self, name: impl Into<String>, m: &Mat) {
        self.insert(name, Tensor::f64(vec![m.rows, m.cols], m.data.clone()));
    }

    pub fn mat(&self, name: &str) -> Result<Mat> {
        let t = self.require(name)?;
        let (r, c) = match t.shape[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => return Err(Error::ShapeMismatch(format!("{name} is not a matrix"))),
        };
        Ok(Mat::from_vec(r, c, t.to_f64()))
    }

    /// Stores every parameter under `prefix` + its name.
    pub fn insert_params(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, m) in store.iter() {
            self.insert_mat(format!("{prefix}{name}"), m);
        }
    }

    /// Overwrites every parameter of `store` from tensors named `prefix` + name.
    pub fn load_params(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, n, _)| (id, n.to_string())).collect();
        for (id, name) in ids {
            let m = self.mat(&format!("{prefix}{name}"))?;
            let slot = store.get_mut(id);
            if slot.shape() != m.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: stored {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        Ok(())
    }
}

pub fn encode(bundle: &Bundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(bundle.len() as u32).to_le_bytes());
    for (name, t) in &bundle.tensors {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len())
            .map_err(|_| Error::InvalidConfig(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.shape.len())
            .map_err(|_| Error::InvalidConfig(format!("rank too large: {name}")))?;
        if t.shape.iter().product::<usize>() != t.len() {
            return Err(Error::ShapeMismatch(format!("{name}: shape/payload disagree")));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(t.dtype_code());
        out.push(rank);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Bundle> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()?;
    let mut bundle = Bundle::default();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not utf-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: shape overflow")))?;
        let data = match dtype {
            0 => {
                let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
                TensorData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => {
                let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
                TensorData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => return Err(Error::CorruptCheckpoint(format!("{name}: unknown dtype {other}"))),
        };
        bundle.insert(name, Tensor { shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(bundle)
}

pub fn save(bundle: &Bundle, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode(bundle)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Bundle> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
