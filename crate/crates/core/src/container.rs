//! Self-describing binary container for named `f64` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "RFIELD\0\0"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! payload      f64 LE values of every array, in header order
//! ```
//!
//! The JSON header carries `version`, a `kind` tag, free-form `meta` and the
//! array directory (`name`, `shape`, `offset` in elements from the start of
//! the payload).

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 8] = b"RFIELD\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a container file (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0} (expected {VERSION})")]
    Version(u32),
    #[error("malformed container header: {0}")]
    Header(String),
    #[error("container is truncated: expected {expected} payload values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("container has no array named {0:?}")]
    Missing(String),
    #[error("container kind is {found:?}, expected {expected:?}")]
    Kind { expected: String, found: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

/// In-memory container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.kind != kind {
            return Err(ContainerError::Kind {
                expected: kind.into(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                e
            })
            .collect();
        let header = Header {
            version: VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| ContainerError::BadMagic)?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)
            .map_err(|_| ContainerError::Header("missing version".into()))?;
        let version = u32::from_le_bytes(u32b);
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)
            .map_err(|_| ContainerError::Header("missing header length".into()))?;
        let len = u64::from_le_bytes(u64b) as usize;
        if r.len() < len {
            return Err(ContainerError::Header("header extends past end of file".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| ContainerError::Header(e.to_string()))?;
        if header.version != version {
            return Err(ContainerError::Header(format!(
                "header version {} disagrees with preamble {version}",
                header.version
            )));
        }
        let payload = &r[len..];
        let found = payload.len() / 8;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            if e.offset + n > found {
                return Err(ContainerError::Truncated {
                    expected: e.offset + n,
                    found,
                });
            }
            let data = payload[e.offset * 8..(e.offset + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| ContainerError::Header(err.to_string()))?;
            arrays.push((e.name, t));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let io = |source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
