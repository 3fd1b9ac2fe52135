//! Binary tensor files exchanged with out-of-process model adapters.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `SPCT`                     |
//! | 1            | version, `0x01`                  |
//! | 1            | dtype, `0x01` = float32          |
//! | 1            | rank `r`                         |
//! | 4·r          | dims as `u32`                    |
//! | 4·Πdims      | row-major `f32` payload          |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPCT";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Tensor(format!("rank {} exceeds 255", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Tensor("dimension exceeds u32".into()));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Tensor(format!("dims {dims:?} hold {n} values, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[VERSION, DTYPE_F32, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(Error::Tensor("missing SPCT magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Tensor(format!("unsupported version {:#04x}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::Tensor(format!("unsupported dtype {:#04x}", bytes[5])));
        }
        let rank = bytes[6] as usize;
        let header = 7 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::Tensor("truncated dims".into()));
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Tensor("element count overflows".into()))?;
        if bytes.len() - header != n * 4 {
            return Err(Error::Tensor(format!(
                "payload is {} bytes, dims {dims:?} need {}",
                bytes.len() - header,
                n * 4
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Tensor::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Writes to a temporary sibling, then renames into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
