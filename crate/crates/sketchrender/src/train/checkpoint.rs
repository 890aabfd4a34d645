//! Binary checkpoint container: little-endian, magic `SKRG`, a format
//! version, then length-prefixed named arrays (name, dtype tag, rank,
//! extents, raw payload). Writing the records read from a file produces
//! byte-identical output.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SKRG";
pub const VERSION: u32 = 1;

const TAG_F32: u8 = 0;
const TAG_U32: u8 = 1;
const TAG_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

/// One named, shaped array inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl ArrayRecord {
    pub fn f32(name: &str, shape: &[usize], data: Vec<f32>) -> ArrayRecord {
        ArrayRecord { name: name.into(), shape: shape.to_vec(), payload: Payload::F32(data) }
    }

    pub fn u32(name: &str, data: Vec<u32>) -> ArrayRecord {
        ArrayRecord { name: name.into(), shape: vec![data.len()], payload: Payload::U32(data) }
    }

    pub fn u8(name: &str, data: Vec<u8>) -> ArrayRecord {
        ArrayRecord { name: name.into(), shape: vec![data.len()], payload: Payload::U8(data) }
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(records: &[ArrayRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, records.len() as u32);
    for rec in records {
        let count: usize = rec.shape.iter().product();
        if count != rec.payload.len() {
            return Err(Error::Checkpoint(format!(
                "record {}: shape {:?} does not match {} elements",
                rec.name,
                rec.shape,
                rec.payload.len()
            )));
        }
        push_u32(&mut out, rec.name.len() as u32);
        out.extend_from_slice(rec.name.as_bytes());
        let tag = match rec.payload {
            Payload::F32(_) => TAG_F32,
            Payload::U32(_) => TAG_U32,
            Payload::U8(_) => TAG_U8,
        };
        out.push(tag);
        push_u32(&mut out, rec.shape.len() as u32);
        for &e in &rec.shape {
            push_u32(&mut out, e as u32);
        }
        match &rec.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ArrayRecord>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not utf-8".into()))?;
        let tag = r.u8()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let payload = match tag {
            TAG_F32 => {
                let raw = r.take(count * 4)?;
                Payload::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            TAG_U32 => {
                let raw = r.take(count * 4)?;
                Payload::U32(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            TAG_U8 => Payload::U8(r.take(count)?.to_vec()),
            t => return Err(Error::Checkpoint(format!("unknown dtype tag {t}"))),
        };
        records.push(ArrayRecord { name, shape, payload });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(records)
}

pub fn write_checkpoint(path: &Path, records: &[ArrayRecord]) -> Result<()> {
    fs::write(path, encode(records)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<ArrayRecord>> {
    decode(&fs::read(path)?)
}

/// Pull a named record out of a decoded checkpoint.
pub fn find<'a>(records: &'a [ArrayRecord], name: &str) -> Result<&'a ArrayRecord> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
}

pub fn expect_f32(rec: &ArrayRecord) -> Result<&[f32]> {
    match &rec.payload {
        Payload::F32(v) => Ok(v),
        _ => Err(Error::Checkpoint(format!("record {} is not f32", rec.name))),
    }
}

pub fn expect_u32(rec: &ArrayRecord) -> Result<&[u32]> {
    match &rec.payload {
        Payload::U32(v) => Ok(v),
        _ => Err(Error::Checkpoint(format!("record {} is not u32", rec.name))),
    }
}

pub fn expect_u8(rec: &ArrayRecord) -> Result<&[u8]> {
    match &rec.payload {
        Payload::U8(v) => Ok(v),
        _ => Err(Error::Checkpoint(format!("record {} is not u8", rec.name))),
    }
}

pub fn split_u64(v: u64) -> Vec<u32> {
    vec![v as u32, (v >> 32) as u32]
}

pub fn join_u64(words: &[u32]) -> Result<u64> {
    if words.len() != 2 {
        return Err(Error::Checkpoint("expected two words for a u64".into()));
    }
    Ok(words[0] as u64 | (words[1] as u64) << 32)
}

pub fn split_u128(v: u128) -> Vec<u32> {
    (0..4).map(|i| (v >> (32 * i)) as u32).collect()
}

pub fn join_u128(words: &[u32]) -> Result<u128> {
    if words.len() != 4 {
        return Err(Error::Checkpoint("expected four words for a u128".into()));
    }
    Ok(words.iter().enumerate().map(|(i, &w)| (w as u128) << (32 * i)).sum())
}
