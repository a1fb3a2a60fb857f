use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"UMSE";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

/// `len × dim` row-major feature matrix for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::invalid(
                "features",
                format!("empty feature matrix {len}x{dim}"),
            ));
        }
        if data.len() != len * dim {
            return Err(Error::Shape {
                op: "features",
                lhs: vec![len, dim],
                rhs: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "features" });
        }
        Ok(Self { len, dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            len,
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Copy padded with zero rows (or truncated) to `len` rows.
    pub fn padded(&self, len: usize) -> Self {
        let mut data = self.data.clone();
        data.resize(len * self.dim, 0.0);
        Self {
            len,
            dim: self.dim,
            data,
        }
    }

    pub fn zeroed(&self) -> Self {
        Self::zeros(self.len, self.dim)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.len, self.dim, self.data.clone()).expect("validated shape")
    }

    /// Binary encoding: `UMSE`, version byte, u32 rows, u32 cols, then
    /// `f32` little-endian values in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("truncated header ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return Err("bad magic, expected UMSE".into());
        }
        if bytes[4] != VERSION {
            return Err(format!("unsupported version {}", bytes[4]));
        }
        let u32_at =
            |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let (rows, cols) = (u32_at(5), u32_at(9));
        if rows == 0 || cols == 0 {
            return Err(format!("empty matrix {rows}x{cols}"));
        }
        let body = &bytes[HEADER_LEN..];
        if body.len() != rows * cols * 4 {
            return Err(format!(
                "expected {} value bytes for {rows}x{cols}, found {}",
                rows * cols * 4,
                body.len()
            ));
        }
        let data: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(Self {
            len: rows,
            dim: cols,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Feature {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
