//! Flat binary container for weight matrices and covariance factors.
//!
//! Layout: an 8-byte header `[magic: u32 LE][rows: u16 LE][cols: u16 LE]`
//! followed by `rows * cols` little-endian `f64` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: u32 = u32::from_le_bytes(*b"EMX1");

pub fn write_matrix<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = m.shape();
    let rows16 = u16::try_from(rows)
        .map_err(|_| Error::Container(format!("{rows} rows exceed the header range")))?;
    let cols16 = u16::try_from(cols)
        .map_err(|_| Error::Container(format!("{cols} cols exceed the header range")))?;
    let mut buf = Vec::with_capacity(8 + 8 * rows * cols);
    buf.extend_from_slice(&MAGIC.to_le_bytes());
    buf.extend_from_slice(&rows16.to_le_bytes());
    buf.extend_from_slice(&cols16.to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut header = [0u8; 8];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Container(format!("short header: {e}")))?;
    let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(Error::Container(format!("bad magic {magic:#010x}")));
    }
    let rows = u16::from_le_bytes(header[4..6].try_into().unwrap()) as usize;
    let cols = u16::from_le_bytes(header[6..8].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != 8 * rows * cols {
        return Err(Error::Container(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            8 * rows * cols,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::new();
    write_matrix(&mut bytes, m)?;
    crate::harness::io::write_atomic(path, &bytes)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(std::fs::File::open(path)?)
}
