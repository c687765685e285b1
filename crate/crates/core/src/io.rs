//! Data matrix files.
//!
//! CSV: one row per variable, one column per observation, real entries,
//! an optional header row of non-numeric labels.
//!
//! Binary: little-endian, 16-byte header `b"FLSS"`, `u32` rows, `u32` cols,
//! `u32` dtype tag, then the entries in column-major order. Tag 1 stores
//! `f64` values; tag 2 stores complex entries as `(re, im)` `f64` pairs.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fisher::DataMatrix;

pub const MAGIC: &[u8; 4] = b"FLSS";
pub const DTYPE_F64: u32 = 1;
pub const DTYPE_C128: u32 = 2;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

pub fn read_matrix_csv<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if first => {}
            Err(_) => return Err(Error::Parse(format!("line {}: non-numeric entry", lineno + 1))),
        }
        first = false;
    }
    let Some(cols) = rows.first().map(Vec::len) else {
        return Err(Error::Parse("matrix file has no numeric rows".into()));
    };
    if let Some(k) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Parse(format!("row {} has {} entries, expected {cols}", k + 1, rows[k].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse("matrix has non-finite entries".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(mut reader: R) -> Result<DataMatrix> {
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|e| Error::Parse(format!("binary header: {e}")))?;
    if &header[..4] != MAGIC {
        return Err(Error::Parse("bad magic, expected FLSS".into()));
    }
    let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().unwrap()) as usize;
    let (rows, cols, tag) = (word(4), word(8), word(12) as u32);
    let per = match tag {
        DTYPE_F64 => 1,
        DTYPE_C128 => 2,
        t => return Err(Error::Parse(format!("unknown dtype tag {t}"))),
    };
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(per))
        .ok_or_else(|| Error::Parse("matrix size overflows".into()))?;
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Parse(format!("binary body: {e}")))?;
    if bytes.len() != 8 * count {
        return Err(Error::Parse(format!("expected {} data bytes, found {}", 8 * count, bytes.len())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse("matrix has non-finite entries".into()));
    }
    Ok(if tag == DTYPE_F64 {
        DataMatrix::Real(DMatrix::from_column_slice(rows, cols, &vals))
    } else {
        let c: Vec<Complex64> = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        DataMatrix::Complex(DMatrix::from_column_slice(rows, cols, &c))
    })
}

pub fn write_matrix_binary<W: Write>(m: &DataMatrix, mut out: W) -> std::io::Result<()> {
    let tag = if m.is_complex() { DTYPE_C128 } else { DTYPE_F64 };
    out.write_all(MAGIC)?;
    for v in [m.nrows() as u32, m.ncols() as u32, tag] {
        out.write_all(&v.to_le_bytes())?;
    }
    match m {
        DataMatrix::Real(r) => {
            for v in r.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        DataMatrix::Complex(c) => {
            for v in c.iter() {
                out.write_all(&v.re.to_le_bytes())?;
                out.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Loads a matrix, choosing the format from the file's first bytes.
pub fn load_matrix(path: &Path) -> Result<DataMatrix> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let tagged = |e: Error| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    };
    if bytes.starts_with(MAGIC) {
        read_matrix_binary(&bytes[..]).map_err(tagged)
    } else {
        read_matrix_csv(&bytes[..]).map(DataMatrix::Real).map_err(tagged)
    }
}

/// Writes binary for `.bin` paths and CSV otherwise; complex data needs binary.
pub fn save_matrix(m: &DataMatrix, path: &Path) -> Result<()> {
    let binary = path.extension().is_some_and(|e| e == "bin");
    let mut buf = Vec::new();
    match (m, binary) {
        (_, true) => write_matrix_binary(m, &mut buf),
        (DataMatrix::Real(r), false) => write_matrix_csv(r, &mut buf),
        (DataMatrix::Complex(_), false) => {
            return Err(Error::Config(format!("{}: complex matrices need the binary format", path.display())))
        }
    }
    .map_err(io_err(path))?;
    std::fs::write(path, buf).map_err(io_err(path))
}
