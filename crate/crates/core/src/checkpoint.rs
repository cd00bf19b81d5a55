//! Self-describing binary container for trained stage models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "MITOSCK\0"
//! version   u16
//! stage     u8       1 = translation, 2 = detector, 3 = classifier
//! reserved  u8
//! length    u64      payload byte count
//! payload:
//!   epoch          u64
//!   config         str      JSON echo of the stage configuration
//!   series count   u32, then per series: name str, len u64, f64 * len
//!   tensor count   u32, then per tensor: name str, ndim u32, dims u64 * ndim,
//!                                        f64 * product(dims)
//! crc32     u32      over every preceding byte
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MITOSCK\0";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 1 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Translation,
    Detector,
    Classifier,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::Translation => 1,
            Stage::Detector => 2,
            Stage::Classifier => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Stage::Translation),
            2 => Some(Stage::Detector),
            3 => Some(Stage::Classifier),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Translation => "translation",
            Stage::Detector => "detector",
            Stage::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn flat(name: &str, data: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: alloc::vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub epoch: u64,
    pub config_json: String,
    pub series: Vec<(String, Vec<f64>)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(stage: Stage, config: &C) -> Result<Self> {
        let config_json = serde_json::to_string(config).map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(Self {
            stage,
            epoch: 0,
            config_json,
            series: Vec::new(),
            tensors: Vec::new(),
        })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_str(&self.config_json).map_err(|e| Error::Malformed(alloc::format!("config echo: {e}")))
    }

    pub fn push_series(&mut self, name: &str, values: Vec<f64>) {
        self.series.push((name.to_string(), values));
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Malformed(alloc::format!("missing tensor {name:?}")))
    }

    pub fn tensor_sized(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let t = self.tensor(name)?;
        if t.data.len() != len {
            return Err(Error::Malformed(alloc::format!(
                "tensor {name:?} has {} values, architecture needs {len}",
                t.data.len()
            )));
        }
        Ok(t.data.clone())
    }

    pub fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::StageMismatch {
                expected: stage.name(),
                found: self.stage.name(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        payload.extend_from_slice(&self.epoch.to_le_bytes());
        put_str(&mut payload, &self.config_json);
        payload.extend_from_slice(&(self.series.len() as u32).to_le_bytes());
        for (name, values) in &self.series {
            put_str(&mut payload, name);
            payload.extend_from_slice(&(values.len() as u64).to_le_bytes());
            put_f64s(&mut payload, values);
        }
        payload.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut payload, &t.name);
            payload.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                payload.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut payload, &t.data);
        }

        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage.tag());
        out.push(0);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Checksum);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let tag = r.u8()?;
        let stage = Stage::from_tag(tag).ok_or_else(|| Error::Malformed(alloc::format!("unknown stage tag {tag}")))?;
        let _reserved = r.u8()?;
        let len = r.u64()? as usize;
        if len != body.len() - HEADER_LEN {
            return Err(Error::Malformed("payload length disagrees with file size".into()));
        }
        let epoch = r.u64()?;
        let config_json = r.string()?;
        let n_series = r.u32()? as usize;
        let mut series = Vec::new();
        for _ in 0..n_series {
            let name = r.string()?;
            let n = r.u64()? as usize;
            series.push((name, r.f64s(n)?));
        }
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let count = shape.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d));
            let count = count.ok_or_else(|| Error::Malformed("tensor shape overflows".into()))?;
            let data = r.f64s(count)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::Malformed("trailing bytes after tensors".into()));
        }
        Ok(Self {
            stage,
            epoch,
            config_json,
            series,
            tensors,
        })
    }

    /// Decode and require a specific stage tag.
    pub fn from_bytes_for(bytes: &[u8], stage: Stage) -> Result<Self> {
        let ck = Self::from_bytes(bytes)?;
        ck.expect_stage(stage)?;
        Ok(ck)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Malformed("unexpected end of payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(|s| s.to_string())
            .map_err(|_| Error::Malformed("invalid UTF-8 string".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| Error::Malformed("length overflows".into()))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
