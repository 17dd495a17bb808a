//! `TRM1` checkpoints: a header line `TRM1 <kind> <M> <N> <d> <L>` followed
//! by MMF1 blocks for the user table, the item table and, per modality, the
//! projection (`d x d_m`) and for VBPR the preference table (`M x d`).
//! Values are stored as f32.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::model::{BackboneKind, EmbeddingModel, ModelShape};
use crate::corpus::{read_mmf1_block, write_mmf1_block, FeatureTable};
use crate::error::{Error, Result};

fn narrow(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

pub fn save_checkpoint(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (m, n, d) = (model.num_users(), model.num_items(), model.dim());
    let io = |e| Error::io(path, e);
    writeln!(out, "TRM1 {} {m} {n} {d} {}", model.kind(), model.layers()).map_err(io)?;
    write_mmf1_block(&mut out, m, d, &narrow(&model.params.user)).map_err(io)?;
    write_mmf1_block(&mut out, n, d, &narrow(&model.params.item)).map_err(io)?;
    for (k, proj) in model.params.proj.iter().enumerate() {
        write_mmf1_block(&mut out, d, proj.len() / d, &narrow(proj)).map_err(io)?;
        if let Some(pref) = model.params.pref.get(k) {
            write_mmf1_block(&mut out, m, d, &narrow(pref)).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Loads a checkpoint and attaches `features` (in the order used at save
/// time). `knn_k` rebuilds the item graph of the kNN backbone.
pub fn load_checkpoint(path: &Path, features: &[FeatureTable], knn_k: usize) -> Result<EmbeddingModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut header = String::new();
    input.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let fields: Vec<&str> = header.trim_end().split(' ').collect();
    let [magic, kind, m, n, d, layers] = fields[..] else {
        return Err(bad(format!("malformed checkpoint header {header:?}")));
    };
    if magic != "TRM1" {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let kind: BackboneKind = kind.parse()?;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number {s:?}")));
    let (m, n, d, layers) = (num(m)?, num(n)?, num(d)?, num(layers)?);
    let shape = ModelShape { dim: d, layers, knn_k };
    let used: &[FeatureTable] = if kind.uses_features() { features } else { &[] };
    let mut model = EmbeddingModel::new(kind, m, n, shape, used, 0)?;

    let mut next_block = |rows: usize, cols: usize| -> Result<Vec<f64>> {
        let (r, c, data) = read_mmf1_block(&mut input, path)?;
        if (r, c) != (rows, cols) {
            return Err(Error::Shape(format!("checkpoint block is {r}x{c}, expected {rows}x{cols}")));
        }
        Ok(data.into_iter().map(f64::from).collect())
    };
    model.params.user = next_block(m, d)?;
    model.params.item = next_block(n, d)?;
    for (k, table) in used.iter().enumerate() {
        model.params.proj[k] = next_block(d, table.dim())?;
        if kind == BackboneKind::Vbpr {
            model.params.pref[k] = next_block(m, d)?;
        }
    }
    Ok(model)
}
