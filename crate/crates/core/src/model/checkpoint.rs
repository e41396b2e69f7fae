use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFCK";
const VERSION: u16 = 1;

/// One named tensor of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor<f64>,
}

impl Record {
    pub fn new(name: impl Into<String>, tensor: Tensor<f64>) -> Self {
        Record {
            name: name.into(),
            tensor,
        }
    }
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(records.len()).map_err(|_| Error::Contract("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Contract(format!("record name too long: {}", r.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = r.tensor.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Contract("tensor rank above 255".into()))?;
        out.push(rank);
        for &e in shape {
            let e = u32::try_from(e).map_err(|_| Error::Contract("tensor extent above u32".into()))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in r.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Data("record name is not UTF-8".into()))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let shape: Vec<usize> = (0..rank).map(|_| c.u32().map(|e| e as usize)).collect::<Result<_>>()?;
        if shape.contains(&0) {
            return Err(Error::Data(format!("record `{name}` has a zero extent")));
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Data("record size overflows".into()))?;
        let raw = c.take(numel.checked_mul(8).ok_or_else(|| Error::Data("record size overflows".into()))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push(Record::new(name, Tensor::new(&shape, data)));
    }
    if c.pos != bytes.len() {
        return Err(Error::Data("trailing bytes after checkpoint records".into()));
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    crate::io::atomic_write(path, &encode_records(records)?)
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes)
}
