use rayon::prelude::*;

use crate::corpus::{FeatureTable, InteractionSet};
use crate::error::{Error, Result};
use crate::util::{dot, norm, top_k_indices};

/// Row-compressed sparse matrix with f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowGraph {
    num_rows: usize,
    num_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseRowGraph {
    /// Builds from per-row `(col, value)` lists; columns are sorted per row.
    pub fn from_rows(num_cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!((c as usize) < num_cols);
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            num_rows: rows.len(),
            num_cols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `(columns, values)` of one row.
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&(c as u32)).map_or(0.0, |k| vals[k])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.num_rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_rows * self.num_cols];
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[r * self.num_cols + c as usize] = v;
            }
        }
        out
    }

    /// `A x` for a single vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c as usize]).sum()
            })
            .collect()
    }

    /// `A^T x` for a single vector (scatter in row order).
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_cols];
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize] += v * x[r];
            }
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.tmul_vec(&vec![1.0; self.num_rows])
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    /// Same pattern, values replaced by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for r in 0..self.num_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.vals[k] = f(r, self.cols[k] as usize, self.vals[k]);
            }
        }
        out
    }

    /// True when both matrices store entries at the same positions.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.num_rows == other.num_rows && self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// `y = A x` where `x` holds `num_cols` rows of width `dim`.
    pub fn spmm(&self, x: &[f64], dim: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.num_cols * dim);
        let mut y = vec![0.0; self.num_rows * dim];
        y.par_chunks_mut(dim.max(1)).enumerate().for_each(|(r, out)| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let src = &x[c as usize * dim..(c as usize + 1) * dim];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        });
        y
    }
}

/// `y += alpha * x`, in fixed-width chunks so the loop vectorizes.
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    let n = x.len().min(y.len());
    let full = n - n % 8;
    let (xh, xt) = x[..n].split_at(full);
    let (yh, yt) = y[..n].split_at_mut(full);
    for (yc, xc) in yh.chunks_exact_mut(8).zip(xh.chunks_exact(8)) {
        let yc: &mut [f64; 8] = yc.try_into().expect("chunk of 8");
        let xc: &[f64; 8] = xc.try_into().expect("chunk of 8");
        for k in 0..8 {
            yc[k] += alpha * xc[k];
        }
    }
    for (yy, xx) in yt.iter_mut().zip(xt) {
        *yy += alpha * xx;
    }
}

/// Symmetric-normalized bipartite adjacency over `M + N` nodes (users first):
/// each edge carries `1 / sqrt(deg(u) * deg(i))` in both directions.
pub fn build_norm_adjacency(train: &InteractionSet) -> SparseRowGraph {
    let m = train.num_users();
    let nodes = m + train.num_items();
    let user_deg = train.user_degrees();
    let item_deg = train.item_degrees();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nodes];
    for &(u, i) in train.edges() {
        let w = 1.0 / ((user_deg[u as usize] * item_deg[i as usize]) as f64).sqrt();
        rows[u as usize].push(((m + i as usize) as u32, w));
        rows[m + i as usize].push((u, w));
    }
    SparseRowGraph::from_rows(nodes, rows)
}

/// Item-item graph from modality features: per modality, each item links to
/// its `k` most cosine-similar other items (ties to the lower index) with
/// unit weight; modality graphs are averaged and rows L1-normalized.
pub fn build_item_knn_graph(features: &[FeatureTable], k: usize) -> Result<SparseRowGraph> {
    if k == 0 {
        return Err(Error::invalid("knn graph needs k >= 1"));
    }
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("knn graph needs at least one feature table"))?;
    let n = first.num_rows();
    for table in features {
        table.expect_rows(n)?;
    }
    let weight = 1.0 / features.len() as f64;
    let mut acc: Vec<std::collections::BTreeMap<u32, f64>> = vec![Default::default(); n];
    for table in features {
        let unit: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let row = table.row_f64(i);
                let len = norm(&row);
                if len > 0.0 {
                    row.into_iter().map(|v| v / len).collect()
                } else {
                    row
                }
            })
            .collect();
        let neighbors: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut sims: Vec<f64> = unit.iter().map(|other| dot(&unit[i], other)).collect();
                sims[i] = f64::NEG_INFINITY;
                let mut picked = top_k_indices(&sims, k.min(n.saturating_sub(1)));
                picked.retain(|&j| j != i);
                picked
            })
            .collect();
        for (i, list) in neighbors.into_iter().enumerate() {
            let w = weight / list.len().max(1) as f64;
            for j in list {
                *acc[i].entry(j as u32).or_insert(0.0) += w;
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|row| {
            let total: f64 = row.values().sum();
            row.into_iter()
                .map(|(c, v)| (c, if total > 0.0 { v / total } else { v }))
                .collect()
        })
        .collect();
    Ok(SparseRowGraph::from_rows(n, rows))
}
