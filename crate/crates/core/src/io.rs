//! Little-endian binary helpers shared by the on-disk formats.

use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> io::Result<&'a [u8]> {
    if cur.len() < n {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated"));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

pub fn read_bytes(cur: &mut &[u8], n: usize) -> io::Result<Vec<u8>> {
    take(cur, n).map(<[u8]>::to_vec)
}

pub fn read_u64(cur: &mut &[u8]) -> io::Result<u64> {
    Ok(u64::from_le_bytes(take(cur, 8)?.try_into().unwrap()))
}

pub fn read_u32(cur: &mut &[u8]) -> io::Result<u32> {
    Ok(u32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
}

pub fn read_f64(cur: &mut &[u8]) -> io::Result<f64> {
    Ok(f64::from_le_bytes(take(cur, 8)?.try_into().unwrap()))
}

pub fn read_f32(cur: &mut &[u8]) -> io::Result<f32> {
    Ok(f32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
}

/// Reads a whole file and checks its 8-byte magic; returns the remainder.
pub fn read_with_magic(path: &Path, magic: &[u8; 8]) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected magic {}", String::from_utf8_lossy(magic)),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub(crate) fn truncated(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}
