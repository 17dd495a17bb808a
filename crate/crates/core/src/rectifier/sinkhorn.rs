use serde::{Deserialize, Serialize};

use super::affinity::SparseAffinity;
use crate::backbone::SparseRowGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Added to every denominator.
    pub eps: f64,
    pub max_iter: usize,
    /// Stop once every row and column sum is within `tol` of one.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            max_iter: 50,
            tol: 1e-4,
        }
    }
}

/// `P = diag(u) A diag(v)` on the affinity's sparsity pattern.
#[derive(Debug, Clone)]
pub struct SoftMatching {
    pub matrix: SparseRowGraph,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub eps: f64,
    pub iterations: usize,
    /// Largest `|marginal - 1|` of the row-normalized affinity.
    pub initial_deviation: f64,
    /// Largest `|marginal - 1|` of the returned matrix.
    pub deviation: f64,
}

/// Largest absolute deviation of any row or column sum from one.
pub fn marginal_deviation(matrix: &SparseRowGraph) -> f64 {
    matrix
        .row_sums()
        .into_iter()
        .chain(matrix.col_sums())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn row_normalized(matrix: &SparseRowGraph) -> SparseRowGraph {
    let sums = matrix.row_sums();
    matrix.map_values(|r, _, v| if sums[r] > 0.0 { v / sums[r] } else { 0.0 })
}

/// Alternating scaling `u <- 1 / (A v + eps)`, `v <- 1 / (A^T u + eps)`
/// starting from `v = 1`, touching only stored entries.
pub fn sinkhorn(affinity: &SparseAffinity, config: &SinkhornConfig) -> Result<SoftMatching> {
    if !(config.eps > 0.0) || config.max_iter == 0 {
        return Err(Error::invalid("Sinkhorn needs eps > 0 and at least one iteration"));
    }
    let a = &affinity.matrix;
    if a.num_rows() != a.num_cols() {
        return Err(Error::Shape("Sinkhorn expects a square affinity".into()));
    }
    let initial_deviation = marginal_deviation(&row_normalized(a));
    let n = a.num_rows();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut deviation = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        u = a.mul_vec(&v).into_iter().map(|s| 1.0 / (s + config.eps)).collect();
        let col = a.tmul_vec(&u);
        v = col.iter().map(|s| 1.0 / (s + config.eps)).collect();
        // Marginals of diag(u) A diag(v) without materializing it.
        let row_dev = a
            .mul_vec(&v)
            .iter()
            .zip(&u)
            .map(|(s, ui)| (ui * s - 1.0).abs())
            .fold(0.0, f64::max);
        let col_dev = col
            .iter()
            .zip(&v)
            .map(|(s, vj)| (vj * s - 1.0).abs())
            .fold(0.0, f64::max);
        deviation = row_dev.max(col_dev);
        if deviation <= config.tol {
            break;
        }
    }
    let matrix = a.map_values(|r, c, val| u[r] * val * v[c]);
    Ok(SoftMatching {
        matrix,
        u,
        v,
        eps: config.eps,
        iterations,
        initial_deviation,
        deviation,
    })
}

/// Plain row normalization of the affinity, used when balancing is disabled.
pub fn row_normalize(affinity: &SparseAffinity) -> SoftMatching {
    let a = &affinity.matrix;
    let sums = a.row_sums();
    let matrix = row_normalized(a);
    let deviation = marginal_deviation(&matrix);
    SoftMatching {
        matrix,
        u: sums.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect(),
        v: vec![1.0; a.num_cols()],
        eps: 0.0,
        iterations: 0,
        initial_deviation: deviation,
        deviation,
    }
}
