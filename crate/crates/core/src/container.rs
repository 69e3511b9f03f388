//! Little-endian binary tensor container with a JSON metadata sidecar.
//!
//! Layout of a `.bin` file:
//!
//! ```text
//! magic    4 bytes  "CMCF"
//! version  u16      1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u16, name (utf-8)
//!   dtype    u8     1 = f64, 2 = u16, 3 = u64
//!   ndim     u8
//!   dims     u64 * ndim
//!   payload  row-major elements, little-endian
//! ```
//!
//! Metadata lives next to the binary as `<stem>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMCF";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U16(Vec<u16>),
    U64(Vec<u64>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F64(_) => 1,
            TensorData::U16(_) => 2,
            TensorData::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], data: TensorData) -> Result<()> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!("tensor {name}: dims {dims:?} do not match {} elements", data.len())));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Contract(format!("duplicate tensor {name}")));
        }
        self.tensors.push(Tensor { name, dims: dims.to_vec(), data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<f64>) -> Result<()> {
        self.push(name, dims, TensorData::F64(data))
    }

    pub fn push_u16(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<u16>) -> Result<()> {
        self.push(name, dims, TensorData::U16(data))
    }

    pub fn push_u64(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<u64>) -> Result<()> {
        self.push(name, dims, TensorData::U64(data))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let t = self.get(name)?;
        match &t.data {
            TensorData::F64(v) => Ok((&t.dims, v)),
            _ => Err(Error::Format(format!("tensor {name} is not f64"))),
        }
    }

    pub fn u16(&self, name: &str) -> Result<(&[usize], &[u16])> {
        let t = self.get(name)?;
        match &t.data {
            TensorData::U16(v) => Ok((&t.dims, v)),
            _ => Err(Error::Format(format!("tensor {name} is not u16"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<(&[usize], &[u64])> {
        let t = self.get(name)?;
        match &t.data {
            TensorData::U64(v) => Ok((&t.dims, v)),
            _ => Err(Error::Format(format!("tensor {name} is not u64"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u64::from_le_bytes(r.array()?) as usize);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("dims overflow".into()))?;
            let data = match dtype {
                1 => TensorData::F64((0..n).map(|_| r.array().map(f64::from_le_bytes)).collect::<Result<_>>()?),
                2 => TensorData::U16((0..n).map(|_| r.array().map(u16::from_le_bytes)).collect::<Result<_>>()?),
                3 => TensorData::U64((0..n).map(|_| r.array().map(u64::from_le_bytes)).collect::<Result<_>>()?),
                d => return Err(Error::Format(format!("unknown dtype {d}"))),
            };
            c.push(name, &dims, data).map_err(|e| Error::Format(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(c)
    }

    /// Writes `<path>` and its JSON sidecar, each through a temp file + rename.
    pub fn write(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        write_atomic(path, &self.encode())?;
        write_atomic(&sidecar_path(path), serde_json::to_string_pretty(meta)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<(Self, serde_json::Value)> {
        let c = Self::decode(&fs::read(path)?)?;
        let meta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        Ok((c, meta))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a file via a temporary sibling and a rename. The temp file is
/// removed if anything fails.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
