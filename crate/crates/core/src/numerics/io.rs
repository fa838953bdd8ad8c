//! CMAT1: the on-disk matrix format used by every artifact in this crate.
//!
//! Layout, all little-endian: the 5 magic bytes `CMAT1`, u32 row count,
//! u32 column count, then rows·cols f64 values in row-major order. Files
//! may concatenate several records back to back (dataset sample files do),
//! so the reader consumes exactly one record and leaves the stream at the
//! next one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CMAT_MAGIC: &[u8; 5] = b"CMAT1";

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(CMAT_MAGIC)?;
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(m.cols() as u32).to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != CMAT_MAGIC {
        return Err(Error::Format(format!(
            "bad matrix magic {:?}, expected {:?}",
            magic, CMAT_MAGIC
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("matrix header {rows}x{cols} overflows")))?;
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    // new() re-validates finiteness so corrupt files fail loudly here.
    Matrix::new(rows, cols, data)
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    read_matrix(&mut BufReader::new(File::open(path)?))
}

/// Reads concatenated records until EOF. A clean EOF between records ends
/// the sequence; EOF inside a record is corruption and fails.
pub fn read_matrix_sequence<R: Read>(r: &mut R) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    let mut probe = [0u8; 1];
    loop {
        match r.read(&mut probe)? {
            0 => return Ok(out),
            _ => {
                let mut rest = [0u8; 4];
                r.read_exact(&mut rest)?;
                let magic = [probe[0], rest[0], rest[1], rest[2], rest[3]];
                if &magic != CMAT_MAGIC {
                    return Err(Error::Format(format!(
                        "bad matrix magic {:?} in sequence at record {}",
                        magic,
                        out.len()
                    )));
                }
                let mut word = [0u8; 4];
                r.read_exact(&mut word)?;
                let rows = u32::from_le_bytes(word) as usize;
                r.read_exact(&mut word)?;
                let cols = u32::from_le_bytes(word) as usize;
                let mut data = Vec::with_capacity(rows * cols);
                let mut buf = [0u8; 8];
                for _ in 0..rows * cols {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
                out.push(Matrix::new(rows, cols, data)?);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bytes_and_values() {
        let m = Matrix::from_fn(3, 4, |i, j| (i as f64) * 1.5 - (j as f64) * 0.25 + 0.1);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 5 + 4 + 4 + 12 * 8);
        let back = read_matrix(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut buf2 = Vec::new();
        write_matrix(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2, "serialization must be byte-stable");
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &Matrix::zeros(1, 1)).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_matrix(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_record_is_io_error() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &Matrix::zeros(2, 2)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_matrix(&mut buf.as_slice()), Err(Error::Io(_))));
    }

    #[test]
    fn sequence_reads_all_records() {
        let a = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let b = Matrix::from_fn(1, 3, |_, j| j as f64 * 2.0);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        write_matrix(&mut buf, &b).unwrap();
        let seq = read_matrix_sequence(&mut buf.as_slice()).unwrap();
        assert_eq!(seq, vec![a, b]);
    }

    #[test]
    fn empty_sequence_is_empty() {
        let seq = read_matrix_sequence(&mut [].as_slice()).unwrap();
        assert!(seq.is_empty());
    }
}
