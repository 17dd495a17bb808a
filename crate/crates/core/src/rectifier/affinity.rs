use rayon::prelude::*;

use super::anchors::AnchorTable;
use super::projection::Projector;
use crate::backbone::SparseRowGraph;
use crate::corpus::FeatureTable;
use crate::error::{Error, Result};
use crate::util::{dot, top_k_indices};

/// Rows of anchors processed together when scanning similarities.
const ROW_PANEL: usize = 256;

/// Top-K anchor-to-feature affinities `exp(s_ij / tau)` with the diagonal
/// always present.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    pub matrix: SparseRowGraph,
    pub k: usize,
    pub tau: f64,
}

impl SparseAffinity {
    pub fn num_rows(&self) -> usize {
        self.matrix.num_rows()
    }
}

/// Builds the affinity from anchors and a projector applied to `features`.
pub fn build_affinity(
    anchors: &AnchorTable,
    projector: &Projector,
    features: &FeatureTable,
    k: usize,
    tau: f64,
) -> Result<SparseAffinity> {
    features.expect_rows(anchors.num_rows())?;
    if projector.out_dim != anchors.dim() {
        return Err(Error::Shape(format!(
            "projector emits {} dims, anchors have {}",
            projector.out_dim,
            anchors.dim()
        )));
    }
    let projected = projector.project_normalized(features);
    build_affinity_from_projected(anchors, &projected, k, tau)
}

/// `projected` holds unit-normalized projections (`N x d`). Row `i` keeps the
/// `k` largest `s_ij = <anchor_i, projected_j>` (ties to the lower column)
/// plus `j = i`. Rows of zero anchors keep only the diagonal.
pub fn build_affinity_from_projected(
    anchors: &AnchorTable,
    projected: &[f64],
    k: usize,
    tau: f64,
) -> Result<SparseAffinity> {
    if k == 0 {
        return Err(Error::invalid("affinity top-K needs K >= 1"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (n, d) = (anchors.num_rows(), anchors.dim());
    if projected.len() != n * d {
        return Err(Error::Shape(format!(
            "projected matrix has {} values, expected {n}x{d}",
            projected.len()
        )));
    }
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    let starts: Vec<usize> = (0..n).step_by(ROW_PANEL).collect();
    for start in starts {
        let end = (start + ROW_PANEL).min(n);
        let panel: Vec<Vec<(u32, f64)>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let anchor = anchors.row(i);
                if anchors.is_zero(i) {
                    let s = dot(anchor, &projected[i * d..(i + 1) * d]);
                    return vec![(i as u32, (s / tau).exp())];
                }
                let sims: Vec<f64> = (0..n).map(|j| dot(anchor, &projected[j * d..(j + 1) * d])).collect();
                let mut picked = top_k_indices(&sims, k);
                if !picked.contains(&i) {
                    picked.push(i);
                }
                picked.into_iter().map(|j| (j as u32, (sims[j] / tau).exp())).collect()
            })
            .collect();
        rows.extend(panel);
    }
    Ok(SparseAffinity {
        matrix: SparseRowGraph::from_rows(n, rows),
        k,
        tau,
    })
}
