//! Binary parameter files.
//!
//! Layout, all integers little-endian: magic `ZRUD`, `u32` version, `u32`
//! tensor count, then per tensor a `u16` name length and UTF-8 name, a `u8`
//! rank, `u32` dims and the `f32` payload.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gridnet::{GridNetParams, ModelError};
use crate::image::PROXY_SIZE;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ZRUD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {0}")]
    NotFound(PathBuf),
    #[error("checkpoint i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint: bad magic bytes {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Layout(#[from] ModelError),
}

pub fn encode(params: &GridNetParams<f32>) -> Result<Vec<u8>, CheckpointError> {
    let named = params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        let len =
            u16::try_from(name.len()).map_err(|_| CheckpointError::Malformed(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decode a checkpoint; the proxy size is not stored and must be supplied.
pub fn decode(bytes: &[u8], proxy_size: usize) -> Result<GridNetParams<f32>, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = r.u32("tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::Malformed(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: dims {dims:?} overflow")))?;
        let payload = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed(format!("{name}: payload too large")))?,
            &format!("payload of {name}"),
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        named.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(GridNetParams::from_named(named, proxy_size)?)
}

pub fn save_checkpoint(params: &GridNetParams<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode(params)?).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a checkpoint for the standard 256-pixel proxy.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GridNetParams<f32>, CheckpointError> {
    load_checkpoint_with(path, PROXY_SIZE)
}

pub fn load_checkpoint_with(path: impl AsRef<Path>, proxy_size: usize) -> Result<GridNetParams<f32>, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CheckpointError::NotFound(path.to_path_buf())
        } else {
            CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    decode(&bytes, proxy_size)
}
