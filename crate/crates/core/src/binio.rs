//! Little-endian primitives shared by the dataset and checkpoint formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write>(pub W);

impl<W: Write> Writer<W> {
    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b)?;
        Ok(())
    }

    pub fn u32(&mut self, x: u32) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    pub fn u64(&mut self, x: u64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    pub fn usize(&mut self, x: usize) -> Result<()> {
        self.u64(x as u64)
    }

    pub fn f64(&mut self, x: f64) -> Result<()> {
        self.bytes(&x.to_bits().to_le_bytes())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.usize(s.len())?;
        self.bytes(s.as_bytes())
    }

    pub fn f64s<'a>(&mut self, xs: impl IntoIterator<Item = &'a f64>) -> Result<()> {
        for &x in xs {
            self.f64(x)?;
        }
        Ok(())
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Reader { inner, what }
    }

    pub fn malformed(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            msg: msg.into(),
        }
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.malformed(format!("truncated input ({e})")))?;
        Ok(buf)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    /// Length prefix, bounded so corrupt input cannot trigger huge allocations.
    pub fn len(&mut self, max: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > max as u64 {
            return Err(self.malformed(format!("length {n} exceeds limit {max}")));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.bytes()?)))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1 << 24)?;
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.malformed(format!("truncated string ({e})")))?;
        String::from_utf8(buf).map_err(|_| self.malformed("invalid utf-8"))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(self.malformed("trailing bytes")),
        }
    }
}
