//! File formats: CSV matrices (row-major, no header, 17-significant-digit
//! formatting so doubles round-trip exactly), JSON documents, and binary
//! 8-bit PGM images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

/// Format a double like C's `%.17g`: 17 significant digits, trailing zeros
/// stripped, scientific notation when the exponent leaves [-4, 17).
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exponent) = sci.split_once('e').expect("scientific format");
    let exponent: i32 = exponent.parse().expect("numeric exponent");
    if exponent < -4 || exponent >= 17 {
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!(
            "{}e{}{:02}",
            mantissa,
            if exponent < 0 { '-' } else { '+' },
            exponent.abs()
        )
    } else {
        let digits_after = (16 - exponent).max(0) as usize;
        let fixed = format!("{x:.digits_after$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    }
}

/// Write a matrix as comma-separated rows, no header.
pub fn write_matrix_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in 0..matrix.nrows() {
        let mut line = String::new();
        for col in 0..matrix.ncols() {
            if col > 0 {
                line.push(',');
            }
            line.push_str(&format_g17(matrix[(row, col)]));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a comma-separated matrix; all rows must have the same width.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "{}: bad number {:?} on line {}",
                        path.display(),
                        cell,
                        idx + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "{}: ragged row on line {} ({} cells, expected {})",
                    path.display(),
                    idx + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: empty matrix", path.display())));
    }
    let (nrows, ncols) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

/// Read a binary indicator matrix; entries must be exactly 0 or 1.
pub fn read_indicator_csv(path: &Path) -> Result<DMatrix<u8>> {
    let m = read_matrix_csv(path)?;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out[(r, c)] = match m[(r, c)] {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                v => {
                    return Err(Error::Parse(format!(
                        "{}: indicator entry {v} is not 0/1",
                        path.display()
                    )))
                }
            };
        }
    }
    Ok(out)
}

/// Write any serializable document as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("JSON serialization failed: {e}")))?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Parse(format!("{}: bad JSON: {e}", path.display())))
}

/// 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dimension(format!(
                "image buffer has {} bytes, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }
}

/// Read a binary (P5) PGM with maxval 255.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    let mut pos = 0usize;

    let next_token = |raw: &[u8], pos: &mut usize| -> Result<String> {
        // Skip whitespace and '#' comment lines.
        loop {
            while *pos < raw.len() && raw[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < raw.len() && raw[*pos] == b'#' {
                while *pos < raw.len() && raw[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < raw.len() && !raw[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Parse(format!("{}: truncated header", path.display())));
        }
        Ok(String::from_utf8_lossy(&raw[start..*pos]).into_owned())
    };

    let magic = next_token(&raw, &mut pos)?;
    if magic != "P5" {
        return Err(Error::Parse(format!(
            "{}: unsupported image format {magic:?}, need binary P5",
            path.display()
        )));
    }
    let width: usize = next_token(&raw, &mut pos)?
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad width", path.display())))?;
    let height: usize = next_token(&raw, &mut pos)?
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad height", path.display())))?;
    let maxval: usize = next_token(&raw, &mut pos)?
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad maxval", path.display())))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!(
            "{}: only 8-bit images supported (maxval {maxval})",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    if raw.len() < pos + need {
        return Err(Error::Parse(format!(
            "{}: raster truncated ({} of {} bytes)",
            path.display(),
            raw.len().saturating_sub(pos),
            need
        )));
    }
    GrayImage::new(width, height, raw[pos..pos + need].to_vec())
}

/// Write a binary (P5) PGM with maxval 255.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    out.write_all(&image.pixels)?;
    out.flush()?;
    Ok(())
}
