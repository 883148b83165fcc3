//! HUG2 tensor files.
//!
//! Layout (little-endian, no padding): the magic bytes `HUG2`, a `u8` rank
//! (3 for feature maps, 4 for kernels), `rank` `u32` dimensions in
//! declaration order, then `product(dims)` `f32` values in the type's flat
//! index order.

use std::fs;
use std::path::{Path, PathBuf};

use huge2_core::{Kernel4, Tensor3};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HUG2";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("dim overflow: element count of {dims:?} does not fit in memory")]
    DimOverflow { dims: Vec<u32> },
    #[error("unsupported rank {0}")]
    UnsupportedRank(u8),
    #[error("expected a rank-{expected} file, found rank {found}")]
    RankMismatch { expected: u8, found: u8 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid shape: {0}")]
    Shape(#[from] huge2_core::Error),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

/// Contents of a HUG2 file of either rank.
#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    Tensor(Tensor3),
    Kernel(Kernel4),
}

impl Stored {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Stored::Tensor(t) => t.dims().to_vec(),
            Stored::Kernel(k) => k.dims().to_vec(),
        }
    }

    pub fn data(&self) -> &[f32] {
        match self {
            Stored::Tensor(t) => t.data(),
            Stored::Kernel(k) => k.data(),
        }
    }
}

fn encode(dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_tensor(t: &Tensor3) -> Vec<u8> {
    encode(&t.dims(), t.data())
}

pub fn encode_kernel(k: &Kernel4) -> Vec<u8> {
    encode(&k.dims(), k.data())
}

pub fn decode(bytes: &[u8]) -> Result<Stored, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let rank = *bytes.get(4).ok_or(FormatError::Truncated {
        expected: 5,
        actual: bytes.len(),
    })?;
    if rank != 3 && rank != 4 {
        return Err(FormatError::UnsupportedRank(rank));
    }
    let header = 5 + 4 * rank as usize;
    if bytes.len() < header {
        return Err(FormatError::Truncated {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[5..header]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| FormatError::DimOverflow { dims: dims.clone() })?;
    if bytes.len() < payload {
        return Err(FormatError::Truncated {
            expected: payload,
            actual: bytes.len(),
        });
    }
    if bytes.len() > payload {
        return Err(FormatError::TrailingBytes(bytes.len() - payload));
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let d: Vec<usize> = dims.iter().map(|&v| v as usize).collect();
    Ok(match rank {
        3 => Stored::Tensor(Tensor3::from_vec(d[0], d[1], d[2], data)?),
        _ => Stored::Kernel(Kernel4::from_vec(d[0], d[1], d[2], d[3], data)?),
    })
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3, FormatError> {
    match decode(bytes)? {
        Stored::Tensor(t) => Ok(t),
        Stored::Kernel(_) => Err(FormatError::RankMismatch {
            expected: 3,
            found: 4,
        }),
    }
}

pub fn decode_kernel(bytes: &[u8]) -> Result<Kernel4, FormatError> {
    match decode(bytes)? {
        Stored::Kernel(k) => Ok(k),
        Stored::Tensor(_) => Err(FormatError::RankMismatch {
            expected: 4,
            found: 3,
        }),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

fn with_path<T>(path: &Path, r: Result<T, FormatError>) -> Result<T, IoError> {
    r.map_err(|source| IoError::Format {
        path: path.to_owned(),
        source,
    })
}

pub fn save_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<(), IoError> {
    write(path.as_ref(), &encode_tensor(t))
}

pub fn save_kernel(k: &Kernel4, path: impl AsRef<Path>) -> Result<(), IoError> {
    write(path.as_ref(), &encode_kernel(k))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3, IoError> {
    let path = path.as_ref();
    with_path(path, decode_tensor(&read(path)?))
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<Kernel4, IoError> {
    let path = path.as_ref();
    with_path(path, decode_kernel(&read(path)?))
}

pub fn load_any(path: impl AsRef<Path>) -> Result<Stored, IoError> {
    let path = path.as_ref();
    with_path(path, decode(&read(path)?))
}
