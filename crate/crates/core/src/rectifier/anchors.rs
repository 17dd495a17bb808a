use serde::{Deserialize, Serialize};

use crate::backbone::{train, BackboneKind, EmbeddingModel, ModelShape, TrainConfig, TrainHistory};
use crate::corpus::{FeatureTable, SplitDataset};
use crate::error::{Error, Result, StageExt};
use crate::util::norm;

/// Unit-norm collaborative item embeddings; rows of isolated items whose
/// embedding vanished are left at zero and listed in `zero_rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTable {
    dim: usize,
    rows: Vec<f64>,
    zero_rows: Vec<usize>,
}

impl AnchorTable {
    /// Normalizes each row of an `N x dim` matrix.
    pub fn from_embeddings(items: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !items.len().is_multiple_of(dim) {
            return Err(Error::Shape("anchor matrix does not fill rows".into()));
        }
        let mut rows = items.to_vec();
        let mut zero_rows = Vec::new();
        for (i, row) in rows.chunks_exact_mut(dim).enumerate() {
            if let Some(pos) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col: pos });
            }
            let len = norm(row);
            if len == 0.0 {
                zero_rows.push(i);
            } else {
                row.iter_mut().for_each(|v| *v /= len);
            }
        }
        Ok(Self { dim, rows, zero_rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.zero_rows.binary_search(&i).is_ok()
    }

    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    pub fn to_feature_table(&self) -> Result<FeatureTable> {
        FeatureTable::new("anchor", self.dim, self.rows.iter().map(|&v| v as f32).collect())
    }

    /// Re-normalizes after the f32 round trip.
    pub fn from_feature_table(table: &FeatureTable) -> Result<Self> {
        let widened: Vec<f64> = table.as_slice().iter().map(|&v| f64::from(v)).collect();
        Self::from_embeddings(&widened, table.dim())
    }
}

/// Encoder settings for anchor pre-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct AnchorConfig {
    pub shape: ModelShape,
    pub train: TrainConfig,
}


#[derive(Debug, Clone)]
pub struct Anchors {
    pub table: AnchorTable,
    /// The trained encoder, propagated over `split.train`.
    pub encoder: EmbeddingModel,
    pub history: TrainHistory,
}

/// Trains a LightGCN encoder on `split.train` and normalizes its
/// layer-averaged item embeddings.
pub fn compute_anchors(split: &SplitDataset, config: &AnchorConfig) -> Result<Anchors> {
    if split.train.is_empty() {
        return Err(Error::invalid("anchor encoder needs training edges"));
    }
    let model = EmbeddingModel::new(
        BackboneKind::Lightgcn,
        split.num_users(),
        split.num_items(),
        config.shape,
        &[],
        config.train.seed,
    )?;
    let (encoder, history) = train(model, split, &config.train, None).stage("anchor-encoder")?;
    let table = anchors_from_model(&encoder)?;
    Ok(Anchors {
        table,
        encoder,
        history,
    })
}

/// Anchor table from an already propagated model.
pub fn anchors_from_model(model: &EmbeddingModel) -> Result<AnchorTable> {
    let (_, items) = model.final_embeddings()?;
    AnchorTable::from_embeddings(items, model.dim())
}
