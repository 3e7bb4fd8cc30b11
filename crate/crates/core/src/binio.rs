//! Little-endian helpers for the checkpoint and dataset cache containers.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reads and checks a 4-byte magic tag followed by a version byte.
pub(crate) fn expect_header(r: &mut impl Read, kind: &'static str, magic: &[u8; 4], version: u8) -> Result<()> {
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag).map_err(|e| truncated(kind, e))?;
    if &tag != magic {
        return Err(Error::format(kind, format!("bad magic tag {tag:?}")));
    }
    let v = read_u8(r).map_err(|e| truncated(kind, e))?;
    if v != version {
        return Err(Error::format(kind, format!("unsupported version {v}")));
    }
    Ok(())
}

pub(crate) fn expect_eof(r: &mut impl Read, kind: &'static str) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::format(kind, "trailing bytes after payload")),
    }
}

pub(crate) fn truncated(kind: &'static str, e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format(kind, "file is truncated")
    } else {
        Error::Io(e)
    }
}

/// Checked conversion of a stored count; rejects sizes that cannot be
/// allocated sensibly.
pub(crate) fn count(kind: &'static str, v: u64) -> Result<usize> {
    usize::try_from(v)
        .ok()
        .filter(|&n| n <= (1usize << 40))
        .ok_or_else(|| Error::format(kind, format!("implausible count {v}")))
}
