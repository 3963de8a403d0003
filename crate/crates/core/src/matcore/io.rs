//! Matrix file formats.
//!
//! Text: a `rows cols` header line, then one line per row of
//! space-separated values printed with 17 significant digits (exact
//! round trip for `f64`).
//!
//! Binary: the magic bytes `OBSM`, little-endian `u64` rows and cols, then
//! `rows * cols` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Matrix;
use crate::error::{PruneError, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"OBSM";

pub fn write_matrix_text<W: Write>(out: &mut W, m: &Matrix) -> Result<()> {
    writeln!(out, "{} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Parses a text matrix from a token stream; leaves trailing tokens alone.
pub(crate) fn parse_text_tokens<'a, I: Iterator<Item = &'a str>>(tokens: &mut I) -> Result<Matrix> {
    let mut next_usize = |what: &str| -> Result<usize> {
        let tok = tokens
            .next()
            .ok_or_else(|| PruneError::Parse(format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| PruneError::Parse(format!("bad {what} {tok:?}")))
    };
    let rows = next_usize("row count")?;
    let cols = next_usize("column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        let tok = tokens.next().ok_or_else(|| {
            PruneError::Parse(format!("expected {} values, found {idx}", rows * cols))
        })?;
        let v: f64 = tok
            .parse()
            .map_err(|_| PruneError::Parse(format!("bad value {tok:?}")))?;
        data.push(v);
    }
    Matrix::new(rows, cols, data)
}

pub fn read_matrix_text(text: &str) -> Result<Matrix> {
    let mut tokens = text.split_whitespace();
    let m = parse_text_tokens(&mut tokens)?;
    if let Some(extra) = tokens.next() {
        return Err(PruneError::Parse(format!("trailing data {extra:?}")));
    }
    Ok(m)
}

pub fn write_matrix_binary<W: Write>(out: &mut W, m: &Matrix) -> Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(m.rows() as u64).to_le_bytes())?;
    out.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(input: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(PruneError::Parse("missing OBSM magic".into()));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| PruneError::Parse(format!("{rows}x{cols} overflows")))?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        input.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Matrix::new(rows, cols, data)
}

/// Reads either format, detected by the binary magic.
pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_matrix_binary(&mut bytes.as_slice())
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| PruneError::Parse("matrix file is neither OBSM binary nor UTF-8 text".into()))?;
        read_matrix_text(&text)
    }
}

/// Writes binary when the extension is `.bin`, text otherwise.
pub fn write_matrix_file(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "bin") {
        write_matrix_binary(&mut buf, m)?;
    } else {
        write_matrix_text(&mut buf, m)?;
    }
    fs::write(path, buf)?;
    Ok(())
}
