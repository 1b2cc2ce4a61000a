//! Binary model checkpoints (little-endian).
//!
//! ```text
//! "RQVC" | version u16
//! | entry_count u16 | per entry: name_len u16, name, role u8, granularity u8, dim u32, token_count u32
//! | hidden u32 | activation u8 | mhsa_heads u32 (0 = off) | standardize u8
//! | lr f64 | batch u32 | epochs u32 | decay_factor f64 | decay_epoch u32
//! | beta1 f64 | beta2 f64 | eps f64 | seed u64 | loss u8
//! | shift f64 x total_dim | scale f64 x total_dim
//! | param_count u64 | params f64 x param_count
//! | crc32 of all preceding bytes u32
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::adam::AdamConfig;
use super::layout::{ConcatLayout, LayoutEntry};
use super::loss::LossKind;
use super::mhsa::MhsaPool;
use super::mlp::{Activation, MlpHead};
use super::model::{FusionModel, InputNorm};
use super::train::{HeadConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{Granularity, Role};

const MAGIC: [u8; 4] = *b"RQVC";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint ends at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.0.extend_from_slice(&MAGIC);
        w.u16(VERSION);
        let entries = self.model.layout.entries();
        w.u16(u16::try_from(entries.len()).map_err(|_| Error::InvalidInput("too many layout entries".into()))?);
        for e in entries {
            let name = e.name.as_bytes();
            w.u16(u16::try_from(name.len()).map_err(|_| Error::InvalidInput("source name too long".into()))?);
            w.0.extend_from_slice(name);
            w.u8(e.role.code());
            w.u8(e.granularity.code());
            w.u32(e.dim)?;
            w.u32(e.token_count)?;
        }
        w.u32(self.head.hidden)?;
        w.u8(self.head.activation.code());
        w.u32(self.head.mhsa_heads.unwrap_or(0))?;
        w.u8(self.head.standardize as u8);
        let t = &self.train;
        w.f64(t.learning_rate);
        w.u32(t.batch_size)?;
        w.u32(t.epochs)?;
        w.f64(t.lr_decay_factor);
        w.u32(t.lr_decay_epoch)?;
        w.f64(t.adam.beta1);
        w.f64(t.adam.beta2);
        w.f64(t.adam.eps);
        w.u64(t.seed);
        w.u8(t.loss.code());
        for &v in self.model.norm.shift.iter().chain(&self.model.norm.scale) {
            w.f64(v);
        }
        let params = self.model.parameters();
        w.u64(params.len() as u64);
        for v in params {
            w.f64(v);
        }
        let crc = crc32fast::hash(&w.0);
        w.0.extend_from_slice(&crc.to_le_bytes());
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("checkpoint shorter than its magic".into()));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader { bytes: body, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let stored = u32::from_le_bytes(crc.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let n_entries = r.u16()? as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::InvalidInput("layout name is not UTF-8".into()))?
                .to_string();
            let role = Role::from_code(r.u8()?)?;
            let granularity = Granularity::from_code(r.u8()?)?;
            let dim = r.u32()?;
            let token_count = r.u32()?;
            entries.push(LayoutEntry {
                name,
                role,
                granularity,
                dim,
                token_count,
            });
        }
        let layout = ConcatLayout::new(entries)?;
        let hidden = r.u32()?;
        let activation = Activation::from_code(r.u8()?)?;
        let heads = r.u32()?;
        let standardize = r.u8()? != 0;
        let head = HeadConfig {
            hidden,
            activation,
            mhsa_heads: (heads > 0).then_some(heads),
            standardize,
        };
        let train = TrainConfig {
            learning_rate: r.f64()?,
            batch_size: r.u32()?,
            epochs: r.u32()?,
            lr_decay_factor: r.f64()?,
            lr_decay_epoch: r.u32()?,
            adam: AdamConfig {
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            },
            seed: r.u64()?,
            loss: LossKind::from_code(r.u8()?)?,
        };
        let d = layout.total_dim();
        let mut norm = InputNorm::identity(d);
        for v in norm.shift.iter_mut() {
            *v = r.f64()?;
        }
        for v in norm.scale.iter_mut() {
            *v = r.f64()?;
        }
        let n_params = r.u64()? as usize;
        let mhsa = layout.token_entry().map(|(e, _)| e.dim);
        let mut model = FusionModel {
            norm,
            head: MlpHead {
                w1: DMatrix::zeros(d, hidden),
                b1: DVector::zeros(hidden),
                w2: DVector::zeros(hidden),
                b2: 0.0,
                activation,
            },
            mhsa: match (mhsa, head.mhsa_heads) {
                (Some(dim), Some(h)) => Some(MhsaPool::new(
                    h,
                    DMatrix::zeros(dim, dim),
                    DMatrix::zeros(dim, dim),
                    DMatrix::zeros(dim, dim),
                    DMatrix::zeros(dim, dim),
                )?),
                (None, _) => None,
                (Some(_), None) => {
                    return Err(Error::InvalidInput("token layout without attention heads".into()))
                }
            },
            layout,
        };
        if n_params != model.parameter_count() {
            return Err(Error::Shape(format!(
                "checkpoint stores {n_params} parameters, layout implies {}",
                model.parameter_count()
            )));
        }
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        model.set_parameters(&params)?;
        if r.pos != body.len() {
            return Err(Error::InvalidInput("trailing bytes in checkpoint".into()));
        }
        Ok(Self { model, head, train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
