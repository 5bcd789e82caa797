//! `MALN1` parameter files: named tensors, little-endian.
//!
//! Layout: magic `MALN1`, `u32` tensor count, then per tensor a `u16` name
//! length, the UTF-8 name, a `u8` rank, `u32` extents and raw `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"MALN1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let name = name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Usage(format!("tensor name of {} bytes", name.len())))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Usage("rank above 255".into()))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode_tensors(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors).expect("writing to a Vec cannot fail");
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(5, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected MALN1".into(),
        });
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for k in 0..count {
        let at = c.pos as u64;
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap());
        let name = std::str::from_utf8(c.take(len as usize, "name")?)
            .map_err(|_| Error::Parse {
                offset: at,
                message: format!("tensor {k} name is not UTF-8"),
            })?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8, &format!("values of {name}"))?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| Error::Parse {
            offset: at,
            message: e.to_string(),
        })?;
        out.push((name, t));
    }
    if c.pos != buf.len() {
        return Err(Error::Parse {
            offset: c.pos as u64,
            message: "trailing bytes after last tensor".into(),
        });
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&encode_tensors(tensors))
        .map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::file(path, e))?;
    decode_tensors(&buf)
}
