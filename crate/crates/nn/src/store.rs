//! Named parameter tensors and their binary serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LOBCALPS"
//! version  u32      1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rows u64, cols u64
//! data     f64 LE   every tensor's values in table order, row-major
//! ```

use thiserror::Error;

use crate::matrix::Matrix;

pub const MAGIC: &[u8; 8] = b"LOBCALPS";
pub const FORMAT_VERSION: u32 = 1;

pub type ParamId = usize;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("unsupported parameter format version {0}")]
    Version(u32),
    #[error("parameter file truncated")]
    Truncated,
    #[error("parameter name is not UTF-8")]
    Name,
    #[error("{0} trailing bytes after parameter data")]
    Trailing(usize),
    #[error("parameter `{0}` holds non-finite values")]
    NonFinite(String),
    #[error("parameter layout differs: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Replaces every value with those of `other`, which must share the layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), StoreError> {
        self.check_layout(other)?;
        self.values.clone_from(&other.values);
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamStore) -> Result<(), StoreError> {
        if self.names != other.names {
            return Err(StoreError::Layout("parameter names differ".into()));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.shape() != b.shape() {
                return Err(StoreError::Layout(format!(
                    "`{}` is {:?} here but {:?} in the other store",
                    self.names[i],
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.n_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for (name, m) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        }
        for m in &self.values {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(StoreError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| StoreError::Name)?
                .to_owned();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            table.push((name, rows, cols));
        }
        let mut store = ParamStore::new();
        for (name, rows, cols) in table {
            let n = rows.checked_mul(cols).ok_or(StoreError::Truncated)?;
            let raw = r.take(n.checked_mul(8).ok_or(StoreError::Truncated)?)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite(name));
            }
            store.add(name, Matrix::from_vec(rows, cols, data));
        }
        if r.pos != bytes.len() {
            return Err(StoreError::Trailing(bytes.len() - r.pos));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).ok_or(StoreError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(StoreError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
