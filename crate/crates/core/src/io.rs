//! File formats: frames (JSON header plus CSV or raw f64 data) and dense
//! matrices as headerless CSV, one matrix row per line.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Frame;

/// JSON header describing a stored frame. Exactly one of `csv` and `bin`
/// names the data file, relative to the header's directory. `k` counts
/// pools, so the frame has `k * l` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub layout: String,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameEncoding {
    Csv,
    Binary,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let h: FrameHeader = serde_json::from_str(&text)
        .map_err(|e| Error::data(path, format!("bad frame header: {e}")))?;
    if h.layout != "column-major" || h.dtype != "f64" {
        return Err(Error::data(
            path,
            format!("unsupported layout/dtype {}/{}", h.layout, h.dtype),
        ));
    }
    let m = h.k * h.l;
    let matrix = match (&h.csv, &h.bin) {
        (Some(name), None) => {
            let data = read_matrix(&sibling(path, name))?;
            if data.shape() != (h.n, m) {
                return Err(Error::data(
                    sibling(path, name),
                    format!("expected {}x{} values, found {}x{}", h.n, m, data.nrows(), data.ncols()),
                ));
            }
            data
        }
        (None, Some(name)) => {
            let file = sibling(path, name);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            if bytes.len() != 8 * h.n * m {
                return Err(Error::data(
                    &file,
                    format!("expected {} bytes, found {}", 8 * h.n * m, bytes.len()),
                ));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            DMatrix::from_vec(h.n, m, values)
        }
        _ => {
            return Err(Error::data(path, "header must name exactly one of csv, bin"));
        }
    };
    Frame::new(matrix, h.l).map_err(|e| Error::data(path, e.to_string()))
}

/// Writes `path` (the JSON header) and a data file next to it with the same
/// stem and a `.csv` or `.bin` extension.
pub fn write_frame(path: &Path, f: &Frame, encoding: FrameEncoding) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("frame")
        .to_string();
    let mut header = FrameHeader {
        n: f.dim(),
        k: f.num_pools(),
        l: f.pool_size(),
        layout: "column-major".into(),
        dtype: "f64".into(),
        csv: None,
        bin: None,
    };
    match encoding {
        FrameEncoding::Csv => {
            let name = format!("{stem}.csv");
            write_matrix(&sibling(path, &name), f.matrix())?;
            header.csv = Some(name);
        }
        FrameEncoding::Binary => {
            let name = format!("{stem}.bin");
            let bytes: Vec<u8> = f.matrix().iter().flat_map(|v| v.to_le_bytes()).collect();
            let file = sibling(path, &name);
            fs::write(&file, bytes).map_err(|e| Error::io(&file, e))?;
            header.bin = Some(name);
        }
    }
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric CSV. Lines starting with `#` are ignored.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::data(path, format!("{other:?}")),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(path, format!("row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.parse::<f64>().map_err(|_| {
                    Error::data(path, format!("row {}, column {}: not a number: {s:?}", i + 1, j + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::data(
                    path,
                    format!("row {} has {} fields, expected {}", i + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data(path, "no data rows"));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(file))
}

fn write_rows(w: &mut csv::Writer<fs::File>, path: &Path, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| Error::data(path, e.to_string()))?;
    }
    Ok(())
}

/// Writes `m` with full round-trip precision.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = matrix_writer(path)?;
    write_rows(&mut w, path, m)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `m` followed by a comment row `#meta,v1,v2,...`, which
/// [`read_matrix`] skips.
pub fn write_matrix_with_meta(path: &Path, m: &DMatrix<f64>, meta: &[f64]) -> Result<()> {
    let mut w = matrix_writer(path)?;
    write_rows(&mut w, path, m)?;
    let mut record = vec!["#meta".to_string()];
    record.extend(meta.iter().map(|v| v.to_string()));
    w.write_record(&record).map_err(|e| Error::data(path, e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// The `#meta` row written by [`write_matrix_with_meta`], if present.
pub fn read_meta(path: &Path) -> Result<Option<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let Some(line) = text.lines().find(|l| l.starts_with("#meta")) else {
        return Ok(None);
    };
    line.split(',')
        .skip(1)
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::data(path, format!("bad meta value {s:?}")))
        })
        .collect::<Result<Vec<f64>>>()
        .map(Some)
}

/// All values of a CSV file in row order; used for threshold vectors,
/// which may be stored as a single row or a single column.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    Ok(m.transpose().iter().copied().collect())
}
