use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense per-item feature matrix for one modality, row `i` belonging to item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    modality: String,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureTable {
    pub fn new(modality: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not fill rows of width {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            modality: modality.into(),
            dim,
            data,
        })
    }

    pub fn from_rows(modality: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        Self::new(modality, dim, rows.concat())
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn with_modality(mut self, modality: impl Into<String>) -> Self {
        self.modality = modality.into();
        self
    }

    /// Row `i` widened to f64.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn expect_rows(&self, n: usize) -> Result<()> {
        if self.num_rows() != n {
            return Err(Error::Shape(format!(
                "feature table `{}` has {} rows, dataset has {n} items",
                self.modality,
                self.num_rows()
            )));
        }
        Ok(())
    }
}

/// Writes the MMF1 block for `table` into `out`.
pub(crate) fn write_mmf1_block<W: Write>(out: &mut W, rows: usize, dim: usize, data: &[f32]) -> std::io::Result<()> {
    writeln!(out, "MMF1 {rows} {dim}")?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)
}

/// Reads one MMF1 block (header line plus payload) from `input`.
pub(crate) fn read_mmf1_block<R: BufRead>(input: &mut R, path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut header = Vec::new();
    input
        .read_until(b'\n', &mut header)
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let header = String::from_utf8(header).map_err(|_| bad("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.trim_end_matches('\n').split(' ').collect();
    let [magic, rows, dim] = fields[..] else {
        return Err(bad(format!("malformed header {header:?}")));
    };
    if magic != "MMF1" {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let rows: usize = rows.parse().map_err(|_| bad(format!("bad row count {rows:?}")))?;
    let dim: usize = dim.parse().map_err(|_| bad(format!("bad dimension {dim:?}")))?;
    let expected = rows * dim * 4;
    let mut payload = Vec::with_capacity(expected);
    input
        .take(expected as u64)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() != expected {
        return Err(Error::Shape(format!(
            "header declares {rows}x{dim} but payload holds {} values",
            payload.len() / 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((rows, dim, data))
}

/// Saves in the binary MMF1 format.
pub fn save_features(table: &FeatureTable, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_mmf1_block(&mut out, table.num_rows(), table.dim, &table.data)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Saves as CSV with header `item_index,f0,...`.
pub fn save_features_csv(table: &FeatureTable, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header: Vec<String> = std::iter::once("item_index".to_string())
        .chain((0..table.dim).map(|k| format!("f{k}")))
        .collect();
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (i, row) in table.rows().enumerate() {
        write!(out, "{i}").map_err(io)?;
        for v in row {
            // `Display` for f32 prints the shortest string that round-trips.
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Loads MMF1 or CSV (detected from the first bytes). When `expected_rows`
/// is given the table must have exactly that many rows.
pub fn load_features(path: &Path, modality: &str, expected_rows: Option<usize>) -> Result<FeatureTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
    let table = if head.starts_with(b"MMF1 ") {
        let (rows, dim, data) = read_mmf1_block(&mut reader, path)?;
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::Shape(format!("trailing bytes after {rows}x{dim} payload")));
        }
        FeatureTable::new(modality, dim, data)?
    } else {
        read_csv(reader, path, modality)?
    };
    if let Some(n) = expected_rows {
        table.expect_rows(n)?;
    }
    Ok(table)
}

fn read_csv<R: BufRead>(reader: R, path: &Path, modality: &str) -> Result<FeatureTable> {
    let mut lines = reader.lines();
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let columns: Vec<&str> = header.trim().split(',').collect();
    if columns.first() != Some(&"item_index") || columns.len() < 2 {
        return Err(bad(1, "CSV header must start with item_index".into()));
    }
    let dim = columns.len() - 1;
    let mut rows: Vec<Option<Vec<f32>>> = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Shape(format!("line {lineno}: {} values, expected {}", fields.len(), dim + 1)));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| bad(lineno, format!("bad item index {:?}", fields[0])))?;
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f32>().map_err(|_| bad(lineno, format!("bad value {f:?}"))))
            .collect::<Result<Vec<f32>>>()?;
        if index >= rows.len() {
            rows.resize(index + 1, None);
        }
        if rows[index].replace(values).is_some() {
            return Err(bad(lineno, format!("duplicate item index {index}")));
        }
    }
    let mut data = Vec::with_capacity(rows.len() * dim);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| Error::Shape(format!("CSV is missing item {i}")))?;
        data.extend(row);
    }
    FeatureTable::new(modality, dim, data)
}
