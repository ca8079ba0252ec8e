//! Canonical binary serialization for protocol messages.
//!
//! Every field is written in declaration order with little-endian integers
//! and u64 length prefixes for variable-length parts. The layout is the
//! stable wire contract: recorded traces replay across builds within a
//! major release, and signed payloads are built from the same primitives.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("unknown message tag {0}")]
    BadTag(u8),
    #[error("trailing bytes after message")]
    TrailingBytes,
    #[error("malformed field: {0}")]
    Malformed(&'static str),
}

/// Append-only canonical writer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.put_u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    pub fn put_fixed(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn put_u64_list(&mut self, vs: &[u64]) {
        self.put_u64(vs.len() as u64);
        for &v in vs {
            self.put_u64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor-based canonical reader.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take_u8(&mut self) -> Result<u8, WireError> {
        let b = *self.buf.get(self.pos).ok_or(WireError::UnexpectedEof)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn take_u32(&mut self) -> Result<u32, WireError> {
        let raw = self.take_fixed(4)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    }

    pub fn take_u64(&mut self) -> Result<u64, WireError> {
        let raw = self.take_fixed(8)?;
        Ok(u64::from_le_bytes(raw.try_into().unwrap()))
    }

    pub fn take_fixed(&mut self, len: usize) -> Result<&'a [u8], WireError> {
        if self.pos + len > self.buf.len() {
            return Err(WireError::UnexpectedEof);
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub fn take_bytes(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.take_u64()? as usize;
        self.take_fixed(len)
    }

    pub fn take_u64_list(&mut self) -> Result<Vec<u64>, WireError> {
        let len = self.take_u64()? as usize;
        if len > self.buf.len() / 8 + 1 {
            return Err(WireError::Malformed("list length exceeds input"));
        }
        (0..len).map(|_| self.take_u64()).collect()
    }

    pub fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes)
        }
    }
}
