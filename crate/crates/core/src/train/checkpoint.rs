//! Binary checkpoint, all integers little-endian:
//!
//! ```text
//! "DPDE" | u32 version | u64 step | u64 len, RNG blob
//! u32 count, parameter records | u32 count, moment records
//! record = u32 name_len, name | u8 dtype | u32 rank | u64 dims... | payload
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DPDE";
pub const VERSION: u32 = 1;

/// Generator position plus the sampler's epoch permutation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
    pub cursor: u64,
    pub perm: Vec<u64>,
}

impl RngState {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.seed);
        out.extend_from_slice(&self.stream.to_le_bytes());
        out.extend_from_slice(&self.word_pos.to_le_bytes());
        out.extend_from_slice(&self.cursor.to_le_bytes());
        out.extend_from_slice(&(self.perm.len() as u64).to_le_bytes());
        for p in &self.perm {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let seed = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let cursor = r.u64()?;
        let n = r.u64()? as usize;
        let perm = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Corruption("trailing bytes in RNG state".into()));
        }
        Ok(Self {
            seed,
            stream,
            word_pos,
            cursor,
            perm,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub rng: RngState,
    pub params: IndexMap<String, Tensor<T>>,
    /// Optimizer moments, named `m.<param>` and `v.<param>`.
    pub moments: IndexMap<String, Tensor<T>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Corruption(format!(
                "truncated checkpoint: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn write_table<T: Real>(out: &mut Vec<u8>, table: &IndexMap<String, Tensor<T>>) {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, t) in table {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE as u8);
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
}

fn read_table<T: Real>(r: &mut Reader) -> Result<IndexMap<String, Tensor<T>>> {
    let count = r.u32()?;
    let mut table = IndexMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Corruption("tensor name is not UTF-8".into()))?;
        let code = r.u8()?;
        let dtype =
            DType::from_code(code).ok_or_else(|| Error::Corruption(format!("{name}: unknown dtype code {code}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "{name}: stored as {dtype:?}, requested {:?}",
                T::DTYPE
            )));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corruption(format!("{name}: dims {dims:?} overflow")))?;
        let bytes = r.take(
            n.checked_mul(dtype.size())
                .ok_or_else(|| Error::Corruption(format!("{name}: payload size overflows")))?,
        )?;
        let data = bytes.chunks_exact(dtype.size()).map(T::read_le).collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Corruption(format!("{name}: {e}")))?;
        if table.insert(name.clone(), t).is_some() {
            return Err(Error::Corruption(format!("duplicate tensor {name}")));
        }
    }
    Ok(table)
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let mut blob = Vec::new();
        self.rng.encode(&mut blob);
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
        write_table(&mut out, &self.params);
        write_table(&mut out, &self.moments);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let step = r.u64()?;
        let blob_len = r.u64()? as usize;
        let rng = RngState::decode(r.take(blob_len)?)?;
        let params = read_table(&mut r)?;
        let moments = read_table(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after tensor tables",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            step,
            rng,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored parameters into `store`, which must hold exactly the
    /// same names and shapes.
    pub fn restore_params(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, p) in store.iter() {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::shape(format!("checkpoint has no tensor {name}")))?;
            if t.dims() != p.tensor.dims() {
                return Err(Error::shape(format!(
                    "tensor {name}: checkpoint has {:?}, network expects {:?}",
                    t.dims(),
                    p.tensor.dims()
                )));
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !store.contains(k)) {
            return Err(Error::shape(format!(
                "tensor {extra} in checkpoint is not in the network"
            )));
        }
        for (name, p) in store.iter_mut() {
            p.tensor = self.params[name].clone();
        }
        Ok(())
    }
}

/// Parameters-only checkpoint for inference or initialization.
pub fn params_checkpoint<T: Real>(store: &ParamStore<T>) -> Checkpoint<T> {
    Checkpoint {
        step: 0,
        rng: RngState::default(),
        params: store.iter().map(|(n, p)| (n.to_string(), p.tensor.clone())).collect(),
        moments: IndexMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let mut params = IndexMap::new();
        params.insert("a.weight".to_string(), Tensor::new([2, 1], vec![1.5f32, -0.0]).unwrap());
        Checkpoint {
            step: 42,
            rng: RngState {
                seed: [7; 32],
                stream: 3,
                word_pos: 1 << 70,
                cursor: 2,
                perm: vec![2, 0, 1],
            },
            params,
            moments: IndexMap::new(),
        }
    }

    #[test]
    fn round_trip_and_validation() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).unwrap(), c);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bad),
            Err(Error::Version { found: 9, .. })
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Corruption(_))
        ));
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
