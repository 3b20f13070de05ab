//! Dataset ingestion: numeric CSV tables and IDX image/label pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use nykpca::Dataset;

use crate::error::{HarnessError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a comma-separated numeric table. A first row containing any
/// non-numeric cell is taken as a header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&bytes).map_err(|msg| HarnessError::data(path, msg))
}

/// [`load_csv`] on an in-memory buffer; errors are `line N: ...` messages.
pub fn parse_csv(bytes: &[u8]) -> std::result::Result<Dataset, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            format!("line {line}: {e}")
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if first {
            first = false;
            if parsed.iter().any(Option::is_none) {
                continue;
            }
        }
        let w = *width.get_or_insert(parsed.len());
        if parsed.len() != w {
            return Err(format!("line {line}: expected {w} fields, found {}", parsed.len()));
        }
        let mut row = Vec::with_capacity(w);
        for (col, (cell, value)) in record.iter().zip(parsed).enumerate() {
            match value {
                Some(v) if v.is_finite() => row.push(v),
                Some(_) => return Err(format!("line {line}, column {}: non-finite value {cell:?}", col + 1)),
                None => return Err(format!("line {line}, column {}: not a number: {cell:?}", col + 1)),
            }
        }
        rows.push(row);
    }
    if first {
        return Err("line 1: empty file".to_string());
    }
    if rows.is_empty() {
        return Err("line 2: header without data rows".to_string());
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((flat.len() / d, d), flat).map_err(|e| e.to_string())?;
    Dataset::new(x).map_err(|e| e.to_string())
}

/// Writes a dataset as a headerless CSV table, with the label as a final
/// column when present.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let labels = data.labels();
    for (i, row) in data.x().rows().into_iter().enumerate() {
        let mut line = row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
        if let Some(l) = labels {
            line.push_str(&format!(",{}", l[i]));
        }
        writeln!(out, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> std::result::Result<u32, String> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format!("offset {offset}: header truncated (file has {} bytes)", bytes.len()))
}

/// Parses an IDX image file: `(n, rows * cols)` pixels as reals in `[0, 255]`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format!("offset 0: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let d = rows * cols;
    let need = n.checked_mul(d).ok_or("offset 4: image dimensions overflow")?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(format!("offset 16: truncated pixel data, expected {need} bytes, found {}", payload.len()));
    }
    if payload.len() > need {
        return Err(format!("offset {}: {} unexpected trailing bytes", 16 + need, payload.len() - need));
    }
    Array2::from_shape_vec((n, d), payload.iter().map(|&b| b as f64).collect()).map_err(|e| e.to_string())
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<i64>, String> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format!("offset 0: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(format!("offset 8: truncated labels, expected {n} bytes, found {}", payload.len()));
    }
    if payload.len() > n {
        return Err(format!("offset {}: {} unexpected trailing bytes", 8 + n, payload.len() - n));
    }
    Ok(payload.iter().map(|&b| b as i64).collect())
}

/// Loads an IDX image file with its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = fs::read(images).map_err(|e| HarnessError::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| HarnessError::io(labels, e))?;
    let x = parse_idx_images(&ib).map_err(|m| HarnessError::data(images, m))?;
    let y = parse_idx_labels(&lb).map_err(|m| HarnessError::data(labels, m))?;
    if x.nrows() != y.len() {
        return Err(HarnessError::data(
            labels,
            format!("offset 4: label count {} does not match image count {}", y.len(), x.nrows()),
        ));
    }
    Ok(Dataset::with_labels(x, y)?)
}

/// Rows whose label equals `digit`, in their original order.
pub fn filter_digit(data: &Dataset, digit: i64) -> Result<Dataset> {
    let labels = data
        .labels()
        .ok_or_else(|| HarnessError::Core(nykpca::Error::Usage("dataset has no labels to filter on".into())))?;
    let keep: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == digit).collect();
    let kept_labels = vec![digit; keep.len()];
    if keep.is_empty() {
        let x = Array2::zeros((0, data.dim()));
        return Ok(Dataset::with_labels(x, kept_labels)?);
    }
    Ok(Dataset::with_labels(data.select(&keep), kept_labels)?)
}
