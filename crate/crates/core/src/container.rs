//! Binary container primitives shared by the checkpoint and registry formats.
//!
//! All integers are little-endian. Tensor payloads are stored as f32 and
//! widened to f64 on load. Container files end with a CRC32 of every byte
//! before the footer; a single flipped bit fails the load.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    pub fn put_bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// u32 length prefix + UTF-8 bytes.
    pub fn put_string(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.put_bytes(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    /// Append a CRC32 footer over everything written so far.
    pub fn into_bytes_with_crc(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], path: &str) -> Self {
        ByteReader {
            buf,
            pos: 0,
            path: path.to_string(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                &self.path,
                format!("truncated: wanted {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn take_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn take_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn take_u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn take_f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn take_string(&mut self) -> Result<String> {
        let len = self.take_u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(&self.path, "invalid UTF-8 in string field"))
    }
}

/// Named tensor section: count, then per tensor name / rank u8 / dims u32 /
/// f32 data. Iteration over a BTreeMap keeps the byte layout canonical.
pub fn write_tensor_section(w: &mut ByteWriter, tensors: &BTreeMap<String, Tensor>) {
    w.put_u32(tensors.len() as u32);
    for (name, t) in tensors {
        w.put_string(name);
        w.put_u8(t.shape().len() as u8);
        for &d in t.shape() {
            w.put_u32(d as u32);
        }
        for &v in t.data() {
            w.put_f32(v as f32);
        }
    }
}

pub fn read_tensor_section(r: &mut ByteReader) -> Result<BTreeMap<String, Tensor>> {
    let count = r.take_u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name = r.take_string()?;
        let rank = r.take_u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.take_u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from(r.take_f32()?));
        }
        out.insert(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a whole container file and verify its CRC32 footer; returns the body.
pub fn read_file_verified(path: &Path) -> Result<Vec<u8>> {
    let all = read_file(path)?;
    let display = path.display().to_string();
    if all.len() < 4 {
        return Err(Error::format(&display, "file shorter than its checksum"));
    }
    let (body, footer) = all.split_at(all.len() - 4);
    let stored = u32::from_le_bytes(footer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            path: display,
            stored,
            computed,
        });
    }
    Ok(body.to_vec())
}
