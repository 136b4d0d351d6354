use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"PADW";
pub const VERSION: u32 = 1;

/// A stored tensor in its on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn to<E: Element>(&self) -> Tensor<E> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }

    fn from_tensor<E: Element>(t: &Tensor<E>) -> Self {
        match E::DTYPE {
            DType::F32 => StoredTensor::F32(t.cast()),
            DType::F64 => StoredTensor::F64(t.cast()),
        }
    }
}

/// Named tensors in the `PADW` layout: magic, version, count, then per
/// tensor its name, dtype code, rank, extents and little-endian values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightsContainer {
    pub tensors: Vec<(String, StoredTensor)>,
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::format(format!("reading {what}: {e}")))?;
    if buf.len() != n {
        return Err(Error::format(format!("truncated weights file while reading {what}")));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().expect("4 bytes")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8, what)?.try_into().expect("8 bytes")))
}

fn decode_values<E: Element>(raw: &[u8]) -> Vec<E> {
    raw.chunks_exact(E::DTYPE.size_in_bytes()).map(E::read_le).collect()
}

impl WeightsContainer {
    /// Every tensor of the store (parameters and buffers), sorted by name.
    pub fn from_store<E: Element>(store: &ParamStore<E>) -> Self {
        Self {
            tensors: store
                .iter()
                .map(|(name, t)| (name.to_owned(), StoredTensor::from_tensor(t)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, _) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(Error::format(format!("duplicate tensor name `{name}`")));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.check_unique()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype() as u8);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        w.write_all(&out)
            .map_err(|e| Error::format(format!("writing weights: {e}")))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if read_exact(r, 4, "magic")? != MAGIC {
            return Err(Error::format("bad magic: not a PADW weights file"));
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported weights version {version}")));
        }
        let count = read_u32(r, "tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = read_u32(r, "name length")? as usize;
            let name = String::from_utf8(read_exact(r, len, "name")?)
                .map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let code = read_exact(r, 1, "dtype")?[0];
            let dtype = DType::from_code(code).ok_or_else(|| Error::format(format!("unknown dtype code {code}")))?;
            let rank = read_u32(r, "rank")? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(r, "extent").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = n
                .and_then(|n| n.checked_mul(dtype.size_in_bytes()))
                .ok_or_else(|| Error::format(format!("tensor `{name}` is too large")))?;
            let raw = read_exact(r, bytes, &format!("values of `{name}`"))?;
            let t = match dtype {
                DType::F32 => StoredTensor::F32(Tensor::new(&shape, decode_values(&raw))?),
                DType::F64 => StoredTensor::F64(Tensor::new(&shape, decode_values(&raw))?),
            };
            tensors.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::format(e.to_string()))? != 0 {
            return Err(Error::format("trailing bytes after last tensor"));
        }
        let c = Self { tensors };
        c.check_unique()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        super::pnm::write_file(path.as_ref(), &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Copies the tensors whose names start with one of `prefixes` (all
    /// tensors for `None`) into `store`.
    ///
    /// Every selected store tensor must be present with a matching shape;
    /// nothing is written unless all of them are. Returns the number copied.
    pub fn apply_to<E: Element>(&self, store: &mut ParamStore<E>, prefixes: Option<&[&str]>) -> Result<usize> {
        let selected = |name: &str| prefixes.is_none_or(|ps| ps.iter().any(|p| name.starts_with(p)));
        let mut updates = Vec::new();
        for (name, t) in store.iter().filter(|(n, _)| selected(n)) {
            let stored = self
                .get(name)
                .ok_or_else(|| Error::format(format!("weights file lacks tensor `{name}`")))?;
            if stored.shape() != t.shape() {
                return Err(Error::format(format!(
                    "tensor `{name}` has shape {:?} in the file but {:?} in the model",
                    stored.shape(),
                    t.shape()
                )));
            }
            updates.push((name.to_owned(), stored.to::<E>()));
        }
        if let Some((unknown, _)) = self.tensors.iter().find(|(n, _)| selected(n) && !store.contains(n)) {
            return Err(Error::format(format!("weights file has unknown tensor `{unknown}`")));
        }
        let count = updates.len();
        for (name, value) in updates {
            store.set_value(&name, value)?;
        }
        Ok(count)
    }
}

pub fn save_weights<E: Element>(store: &ParamStore<E>, path: impl AsRef<Path>) -> Result<()> {
    WeightsContainer::from_store(store).save(path)
}

/// Loads `path` into `store`, restricted to `prefixes` when given.
pub fn load_weights<E: Element>(
    store: &mut ParamStore<E>,
    path: impl AsRef<Path>,
    prefixes: Option<&[&str]>,
) -> Result<usize> {
    WeightsContainer::load(path)?.apply_to(store, prefixes)
}
