//! `LRM1` binary matrix format.
//!
//! Layout: the 4 magic bytes `LRM1`, little-endian `u32` rows, little-endian
//! `u32` cols, then `rows × cols` little-endian `f64` values in row-major
//! order. Nothing may follow the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LRM1";

pub fn write_matrix<W: Write>(mut w: W, m: &DenseMatrix) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Format("too many columns".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DenseMatrix> {
    let mut header = [0u8; 12];
    read_exact_or_truncated(&mut r, &mut header, "header")?;
    if &header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected LRM1", &header[..4])));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty matrix {rows}x{cols}")));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() < n * 8 {
        return Err(Error::Format(format!(
            "truncated payload: expected {} bytes, found {}",
            n * 8,
            payload.len()
        )));
    }
    if payload.len() > n * 8 {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - n * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_matrix(BufReader::new(File::open(path)?))
}
