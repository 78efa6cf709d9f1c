//! On-disk tensor format "RTEN v1".
//!
//! Layout, all integers little-endian, no padding or compression:
//!
//! ```text
//! bytes 0..4   magic "RTEN"
//! u32          version, always 1
//! u32          dtype: 0 = real f64, 1 = complex f64 (re block then im block)
//! u32          ndim, 1..=8
//! ndim x u64   extents
//! payload      f64 entries, row-major
//! ```
//!
//! Trailing bytes after the payload are rejected, as are non-finite
//! entries; a file either round-trips losslessly or fails with the byte
//! offset of the first problem.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor};

const MAGIC: [u8; 4] = *b"RTEN";
const VERSION: u32 = 1;
const MAX_NDIM: u32 = 8;

/// A tensor read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    Real(RealTensor),
    Complex(ComplexTensor),
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    buf.reserve(xs.len() * 8);
    for &x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn header(dtype: u32, dims: &[usize]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dtype.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf
}

/// Writes a real tensor. Tensors enforce rank >= 1 at construction, so a
/// 0-d write cannot arise through the public types.
pub fn write_real(path: impl AsRef<Path>, t: &RealTensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = header(0, t.dims());
    push_f64s(&mut buf, t.data());
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Writes a complex tensor: real plane, then imaginary plane.
pub fn write_complex(path: impl AsRef<Path>, t: &ComplexTensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = header(1, t.dims());
    push_f64s(&mut buf, t.re());
    push_f64s(&mut buf, t.im());
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let b = self.take(n * 8, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in b.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    self.path,
                    (start + i * 8) as u64,
                    format!("non-finite entry in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Reads any RTEN file.
pub fn read(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {magic:?}, expected \"RTEN\""),
        ));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            4,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let dtype = cur.u32("dtype")?;
    if dtype > 1 {
        return Err(Error::format(path, 8, format!("unknown dtype {dtype}")));
    }
    let ndim_off = cur.pos as u64;
    let ndim = cur.u32("ndim")?;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::format(
            path,
            ndim_off,
            format!("ndim {ndim} outside 1..={MAX_NDIM}"),
        ));
    }

    let mut dims = Vec::with_capacity(ndim as usize);
    let mut len: usize = 1;
    for i in 0..ndim {
        let off = cur.pos as u64;
        let d = cur.u64(&format!("extent {i}"))?;
        if d == 0 {
            return Err(Error::format(path, off, format!("extent {i} is zero")));
        }
        let d_usize = usize::try_from(d)
            .map_err(|_| Error::format(path, off, format!("extent {i} = {d} overflows usize")))?;
        len = len
            .checked_mul(d_usize)
            .ok_or_else(|| Error::format(path, off, "extent product overflows usize"))?;
        dims.push(d_usize);
    }
    // Guard the payload size before allocating.
    let planes = if dtype == 1 { 2usize } else { 1 };
    let expect_payload = len
        .checked_mul(planes)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(path, ndim_off, "payload size overflows usize"))?;
    if bytes.len() - cur.pos != expect_payload {
        return Err(Error::format(
            path,
            cur.pos as u64,
            format!(
                "payload is {} bytes, expected {}",
                bytes.len() - cur.pos,
                expect_payload
            ),
        ));
    }

    let out = if dtype == 0 {
        let data = cur.f64s(len, "real payload")?;
        TensorFile::Real(RealTensor::new(dims, data).map_err(|e| {
            Error::format(path, 0, format!("invalid tensor contents: {e}"))
        })?)
    } else {
        let re = cur.f64s(len, "real plane")?;
        let im = cur.f64s(len, "imaginary plane")?;
        TensorFile::Complex(ComplexTensor::new(dims, re, im).map_err(|e| {
            Error::format(path, 0, format!("invalid tensor contents: {e}"))
        })?)
    };
    Ok(out)
}

/// Reads a file that must contain a real tensor.
pub fn read_real(path: impl AsRef<Path>) -> Result<RealTensor> {
    match read(&path)? {
        TensorFile::Real(t) => Ok(t),
        TensorFile::Complex(_) => Err(Error::format(
            path,
            8,
            "expected real tensor (dtype 0), found complex (dtype 1)",
        )),
    }
}

/// Reads a file that must contain a complex tensor.
pub fn read_complex(path: impl AsRef<Path>) -> Result<ComplexTensor> {
    match read(&path)? {
        TensorFile::Complex(t) => Ok(t),
        TensorFile::Real(_) => Err(Error::format(
            path,
            8,
            "expected complex tensor (dtype 1), found real (dtype 0)",
        )),
    }
}
