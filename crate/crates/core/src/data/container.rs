//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TNSR"  u16 version (=1)  u32 entry_count
//! per entry:
//!   u16 name_len, name bytes (ASCII)
//!   u8  dtype   (1=f32, 2=f64, 3=u8, 4=i64)
//!   u8  ndim,   ndim x u64 extents
//!   raw row-major data
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I64(Vec<i64>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U8(_) => 3,
            TensorData::I64(_) => 4,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn element_size(code: u8) -> Option<usize> {
    match code {
        1 => Some(4),
        2 => Some(8),
        3 => Some(1),
        4 => Some(8),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Entry {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        let data = match t.dtype() {
            DType::F32 => TensorData::F32(t.data().iter().map(|&v| v as f32).collect()),
            DType::F64 => TensorData::F64(t.data().to_vec()),
        };
        Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn from_labels(name: impl Into<String>, labels: &[usize]) -> Self {
        Entry {
            name: name.into(),
            shape: vec![labels.len()],
            data: TensorData::I64(labels.iter().map(|&l| l as i64).collect()),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        match &self.data {
            TensorData::F32(v) => Tensor::new(&self.shape, v.iter().map(|&x| x as f64).collect(), DType::F32),
            TensorData::F64(v) => Tensor::new(&self.shape, v.clone(), DType::F64),
            _ => Err(Error::invalid(format!(
                "entry '{}' holds integers, expected floating point",
                self.name
            ))),
        }
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        let bad = |v: i64| Error::invalid(format!("entry '{}' has negative label {v}", self.name));
        match &self.data {
            TensorData::I64(v) => v
                .iter()
                .map(|&x| usize::try_from(x).map_err(|_| bad(x)))
                .collect(),
            TensorData::U8(v) => Ok(v.iter().map(|&x| x as usize).collect()),
            _ => Err(Error::invalid(format!(
                "entry '{}' holds floating point, expected integer labels",
                self.name
            ))),
        }
    }
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::invalid("too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        if !e.name.is_ascii() {
            return Err(Error::invalid(format!("entry name '{}' is not ASCII", e.name)));
        }
        if !seen.insert(e.name.as_str()) {
            return Err(Error::invalid(format!("duplicate entry name '{}'", e.name)));
        }
        let name_len = u16::try_from(e.name.len())
            .map_err(|_| Error::invalid(format!("entry name too long ({} bytes)", e.name.len())))?;
        let ndim = u8::try_from(e.shape.len())
            .map_err(|_| Error::invalid(format!("entry '{}' has too many dimensions", e.name)))?;
        let numel: usize = e.shape.iter().product();
        if numel != e.data.len() {
            return Err(Error::shape(
                "write_container",
                format!("entry '{}': shape {:?} vs {} elements", e.name, e.shape, e.data.len()),
            ));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.data.code());
        out.push(ndim);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}: need {n} bytes, {remaining} left"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            offset: offset as u64,
            msg,
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.fail(0, format!("bad magic {magic:?}, expected \"TNSR\"")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for index in 0..count {
        let ctx = |name: &str| {
            if name.is_empty() {
                format!("entry #{index}")
            } else {
                format!("entry #{index} ('{name}')")
            }
        };
        let start = r.pos;
        let name_len = r.u16(&format!("{} name length", ctx("")))? as usize;
        let name_bytes = r.take(name_len, &format!("{} name", ctx("")))?;
        if !name_bytes.is_ascii() {
            return Err(r.fail(start + 2, format!("{} name is not ASCII", ctx(""))));
        }
        let name = String::from_utf8(name_bytes.to_vec()).expect("ascii is utf-8");
        if !seen.insert(name.clone()) {
            return Err(r.fail(start, format!("duplicate {}", ctx(&name))));
        }
        let code_at = r.pos;
        let code = r.u8(&format!("{} dtype", ctx(&name)))?;
        let Some(elem) = element_size(code) else {
            return Err(r.fail(code_at, format!("{} has unknown dtype code {code}", ctx(&name))));
        };
        let ndim = r.u8(&format!("{} rank", ctx(&name)))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let at = r.pos;
            let d = r.u64(&format!("{} extents", ctx(&name)))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| r.fail(at, format!("{} element count overflows", ctx(&name))))?;
            shape.push(usize::try_from(d).map_err(|_| r.fail(at, format!("{} extent too large", ctx(&name))))?);
        }
        let nbytes = numel
            .checked_mul(elem as u64)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or_else(|| r.fail(r.pos, format!("{} data size overflows", ctx(&name))))?;
        let raw = r.take(nbytes, &format!("{} data", ctx(&name)))?;
        let data = match code {
            1 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            3 => TensorData::U8(raw.to_vec()),
            _ => TensorData::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        entries.push(Entry { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes after last entry", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn write_container(path: impl AsRef<Path>, entries: &[Entry]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}

/// Looks up an entry by name.
pub fn find<'a>(entries: &'a [Entry], name: &str) -> Result<&'a Entry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::invalid(format!("container has no entry '{name}'")))
}
