//! Little-endian primitives shared by the binary formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) struct LeWriter<W> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    /// u32 length prefix followed by the UTF-8 bytes.
    pub fn str(&mut self, s: &str) -> io::Result<()> {
        let len = u32::try_from(s.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string too long"))?;
        self.u32(len)?;
        self.inner.write_all(s.as_bytes())
    }

    /// Interleaved (u32, f32) pairs.
    pub fn pairs(&mut self, ids: &[u32], vals: &[f32]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(ids.len() * 8);
        for (&i, &v) in ids.iter().zip(vals) {
            buf.extend_from_slice(&i.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Reader that tracks its byte offset and turns short reads into
/// [`Error::Truncated`].
pub(crate) struct LeReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(Error::Truncated(format!("reading {what} at byte {}", self.offset)))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, what)?;
        Ok(b)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn str(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.offset;
        let mut b = vec![0u8; len];
        self.fill(&mut b, what)?;
        String::from_utf8(b).map_err(|_| Error::Format(format!("{what} at byte {at} is not UTF-8")))
    }

    /// Reads a single byte if one is available. Used to tell a clean end of
    /// stream from the start of another record.
    pub fn try_byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.offset += 1;
                    return Ok(Some(b[0]));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn has_more(&mut self) -> Result<bool> {
        Ok(self.try_byte()?.is_some())
    }
}

const CHUNK_PAIRS: usize = 1 << 16;

/// Appends `len` interleaved (u32, f32) pairs to `ids` / `vals`.
pub(crate) fn read_pairs<R: Read>(
    r: &mut LeReader<R>,
    len: usize,
    ids: &mut Vec<u32>,
    vals: &mut Vec<f32>,
    what: &str,
) -> Result<()> {
    let mut remaining = len;
    let mut buf = vec![0u8; remaining.min(CHUNK_PAIRS) * 8];
    while remaining > 0 {
        let n = remaining.min(CHUNK_PAIRS);
        let chunk = &mut buf[..n * 8];
        r.fill(chunk, what)?;
        for p in chunk.chunks_exact(8) {
            ids.push(u32::from_le_bytes([p[0], p[1], p[2], p[3]]));
            vals.push(f32::from_le_bytes([p[4], p[5], p[6], p[7]]));
        }
        remaining -= n;
    }
    Ok(())
}
