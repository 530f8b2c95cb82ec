//! Little-endian binary helpers for the cache and model formats.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io("<stream>", e))
    }

    pub fn magic(&mut self, m: &[u8; 4], version: u32) -> Result<()> {
        self.put(m)?;
        self.u32(version)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn len(&mut self, n: usize) -> Result<()> {
        self.u64(n as u64)
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        let b = s.as_bytes();
        if b.len() > u16::MAX as usize {
            return Err(Error::Format("string too long for header".into()));
        }
        self.put(&(b.len() as u16).to_le_bytes())?;
        self.put(b)
    }

    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.len(v.len())?;
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn matrix_f64(&mut self, m: &Array2<f64>) -> Result<()> {
        self.len(m.nrows())?;
        self.len(m.ncols())?;
        for &x in m.iter() {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated or unreadable data: {e}"))
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    /// Check the magic tag and return the format version.
    pub fn magic(&mut self, m: &[u8; 4], supported: u32) -> Result<u32> {
        let got: [u8; 4] = self.take()?;
        if &got != m {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(m)
            )));
        }
        let v = self.u32()?;
        if v == 0 || v > supported {
            return Err(Error::Format(format!("unsupported format version {v}")));
        }
        Ok(v)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    pub fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Format(format!("length {n} overflows")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take()?) as usize;
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        String::from_utf8(b).map_err(|_| Error::Format("invalid utf-8 in header".into()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn matrix_f64(&mut self) -> Result<Array2<f64>> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format("trailing bytes after payload".into())),
            Err(e) => Err(truncated(e)),
        }
    }
}
