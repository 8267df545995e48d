//! `KOREMAT1` binary container: the 8-byte magic, little-endian `u64` rows and
//! cols, then `rows × cols` little-endian `f64` values in row-major order.

use std::fs;
use std::path::Path;

use super::Matrix;
use crate::error::{KoreError, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"KOREMAT1";
const HEADER_LEN: usize = 24;

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a `KOREMAT1` payload. `origin` only labels errors.
pub fn decode_matrix(bytes: &[u8], origin: &Path) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(KoreError::format(origin, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MATRIX_MAGIC {
        return Err(KoreError::format(origin, "bad magic"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8), word(16));
    let count = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| KoreError::format(origin, "dimensions overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count {
        return Err(KoreError::format(
            origin,
            format!("expected {count} payload bytes, found {}", body.len()),
        ));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::new(rows as usize, cols as usize, data)
        .map_err(|e| KoreError::format(origin, e.to_string()))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_matrix(m)).map_err(|e| KoreError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| KoreError::io(path, e))?;
    decode_matrix(&bytes, path)
}
