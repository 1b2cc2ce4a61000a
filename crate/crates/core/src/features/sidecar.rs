//! RQVF sidecar files: one feature matrix per file, little-endian.
//!
//! ```text
//! "RQVF" | version u16 | name_len u16 | name (UTF-8) | granularity u8
//!        | count u32 | token_count u32 | dim u32
//!        | count * max(token_count, 1) * dim f32 values | crc32(values) u32
//! ```

use std::fs;
use std::path::Path;

use super::{FeatureSource, Granularity};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RQVF";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "rqvf";

/// The contents of one sidecar file.
#[derive(Clone, Debug, PartialEq)]
pub struct Sidecar {
    pub name: String,
    pub granularity: Granularity,
    /// Items: key frames, chunks, or 1 for per-video sources.
    pub count: usize,
    /// Tokens per item; 0 unless `granularity` is `Tokens`.
    pub token_count: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl Sidecar {
    pub fn rows(&self) -> usize {
        self.count * self.token_count.max(1)
    }

    fn check_shape(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Shape(format!("source {}: dim must be at least 1", self.name)));
        }
        match (self.granularity, self.token_count) {
            (Granularity::Tokens, 0) => {
                return Err(Error::Shape(format!(
                    "source {}: token granularity requires token_count >= 1",
                    self.name
                )))
            }
            (Granularity::Tokens, _) | (_, 0) => {}
            (g, t) => {
                return Err(Error::Shape(format!(
                    "source {}: token_count {t} given for {g:?} granularity",
                    self.name
                )))
            }
        }
        if self.values.len() != self.rows() * self.dim {
            return Err(Error::Shape(format!(
                "source {}: {} values for {}x{} matrix",
                self.name,
                self.values.len(),
                self.rows(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Checks header fields against a registered source description.
    pub fn check_against(&self, source: &FeatureSource) -> Result<()> {
        if self.name != source.name {
            return Err(Error::InvalidInput(format!(
                "sidecar carries source {:?}, expected {:?}",
                self.name, source.name
            )));
        }
        if self.granularity != source.granularity {
            return Err(Error::Shape(format!(
                "source {}: sidecar granularity {:?}, registry says {:?}",
                self.name, self.granularity, source.granularity
            )));
        }
        if self.dim != source.dim {
            return Err(Error::DimMismatch {
                source_name: self.name.clone(),
                expected: source.dim,
                found: self.dim,
            });
        }
        if self.token_count != source.token_count {
            return Err(Error::Shape(format!(
                "source {}: sidecar has {} tokens, registry says {}",
                self.name, self.token_count, source.token_count
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        let name = self.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidInput("source name longer than 65535 bytes".into()))?;
        let as_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} exceeds u32")))
        };
        let mut out = Vec::with_capacity(23 + name.len() + self.values.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(self.granularity.code());
        out.extend_from_slice(&as_u32(self.count, "count")?.to_le_bytes());
        out.extend_from_slice(&as_u32(self.token_count, "token_count")?.to_le_bytes());
        out.extend_from_slice(&as_u32(self.dim, "dim")?.to_le_bytes());
        let payload_start = out.len();
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::InvalidInput("source name is not UTF-8".into()))?
            .to_string();
        let granularity = Granularity::from_code(r.take(1, "granularity")?[0])?;
        let count = r.u32("count")? as usize;
        let token_count = r.u32("token_count")? as usize;
        let dim = r.u32("dim")? as usize;
        let n = count
            .checked_mul(token_count.max(1))
            .and_then(|v| v.checked_mul(dim))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::InvalidInput("header sizes overflow".into()))?;
        let payload = r.take(n, "payload")?;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::InvalidInput(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let sidecar = Sidecar {
            name,
            granularity,
            count,
            token_count,
            dim,
            values,
        };
        sidecar.check_shape()?;
        Ok(sidecar)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "need {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn save_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    let bytes = sidecar.to_bytes()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Sidecar::from_bytes(&bytes)
}

/// Loads a sidecar and checks it against the registered source.
pub fn load_sidecar_for(path: &Path, source: &FeatureSource) -> Result<Sidecar> {
    let s = load_sidecar(path)?;
    s.check_against(source)?;
    Ok(s)
}
