//! Little-endian binary encode/decode helpers with byte-offset tracking,
//! shared by the checkpoint, tile, and dataset file formats. Decode errors
//! surface as [`Error::Format`] carrying the offset at which parsing
//! stopped.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn pos(&self) -> u64 {
        self.pos as u64
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos(),
            message: message.into(),
        })
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated: need {n} bytes for {what}, {} left",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let start = self.pos();
        let got = self.bytes(4, "magic")?;
        if got != want {
            return Err(Error::Format {
                offset: start,
                message: format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(want),
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.bytes(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32_slice(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.bytes(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64_slice(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.bytes(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// u32 length followed by that many bytes, decoded as UTF-8.
    pub fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let start = self.pos();
        let b = self.bytes(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format {
            offset: start,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    /// Requires that decoding consumed the whole buffer.
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return self.fail(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            ));
        }
        Ok(())
    }
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    pub fn magic(&mut self, m: &[u8; 4]) {
        self.buf.extend_from_slice(m);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32_slice(&mut self, vs: &[f32]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}
