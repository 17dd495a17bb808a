use serde::{Deserialize, Serialize};

use super::anchors::AnchorTable;
use crate::backbone::{xavier_table, Adam};
use crate::corpus::FeatureTable;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::util::{dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Linear map from a modality's feature space into the anchor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub keep_ratio: f64,
    /// Mean kept-subset loss per epoch.
    pub loss_log: Vec<f64>,
}

impl Projector {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|r| dot(&self.weight[r * self.in_dim..(r + 1) * self.in_dim], x) + self.bias[r])
            .collect()
    }

    /// Unit-normalized projections of every row (`N x out_dim`); zero
    /// projections stay zero.
    pub fn project_normalized(&self, features: &FeatureTable) -> Vec<f64> {
        let mut out = Vec::with_capacity(features.num_rows() * self.out_dim);
        for i in 0..features.num_rows() {
            let z = self.project(&features.row_f64(i));
            let len = norm(&z);
            out.extend(z.into_iter().map(|v| if len > 0.0 { v / len } else { 0.0 }));
        }
        out
    }
}

/// Positions of the `max(1, floor(rho * B))` smallest losses (ties to the
/// earlier position), in ascending position order.
pub fn select_small_loss(losses: &[f64], rho: f64) -> Vec<usize> {
    if losses.is_empty() {
        return Vec::new();
    }
    let keep = crate::util::floor_count(rho, losses.len()).clamp(1, losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Cosine loss `1 - <anchor, z / |z|>` for one projected vector and its
/// gradient with respect to `z`.
pub fn cosine_loss_and_grad(anchor: &[f64], z: &[f64]) -> (f64, Vec<f64>) {
    let len = norm(z);
    if len == 0.0 {
        return (1.0, vec![0.0; z.len()]);
    }
    let cos = dot(anchor, z) / len;
    let grad = anchor
        .iter()
        .zip(z)
        .map(|(&a, &zz)| -(a - cos * zz / len) / len)
        .collect();
    (1.0 - cos, grad)
}

/// Mean cosine loss over `kept` rows of a batch and its gradient with
/// respect to the projector's weight and bias.
pub fn kept_loss_and_grad(
    weight: &[f64],
    bias: &[f64],
    inputs: &[&[f64]],
    anchors: &[&[f64]],
    kept: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let out_dim = bias.len();
    let in_dim = weight.len() / out_dim;
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; out_dim];
    let mut loss = 0.0;
    let scale = 1.0 / kept.len() as f64;
    for &k in kept {
        let x = inputs[k];
        let z: Vec<f64> = (0..out_dim)
            .map(|r| dot(&weight[r * in_dim..(r + 1) * in_dim], x) + bias[r])
            .collect();
        let (l, gz) = cosine_loss_and_grad(anchors[k], &z);
        loss += l * scale;
        for (r, g) in gz.iter().enumerate() {
            let g = g * scale;
            grad_b[r] += g;
            for (gw, xv) in grad_w[r * in_dim..(r + 1) * in_dim].iter_mut().zip(x) {
                *gw += g * xv;
            }
        }
    }
    (loss, grad_w, grad_b)
}

/// Trains `g_m` with per-batch small-loss selection at keep ratio `rho`.
/// Items with zero anchors are skipped.
pub fn train_projection(
    features: &FeatureTable,
    anchors: &AnchorTable,
    rho: f64,
    config: &ProjectionConfig,
) -> Result<Projector> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("keep ratio must be in (0, 1], got {rho}")));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::invalid("projection batch size and learning rate must be positive"));
    }
    features.expect_rows(anchors.num_rows())?;
    let (in_dim, out_dim) = (features.dim(), anchors.dim());
    let mut rng = SplitMix64::derive(config.seed, &format!("projection.{}", features.modality()));
    let mut weight = xavier_table(out_dim, in_dim, &mut rng);
    let mut bias = vec![0.0; out_dim];
    let mut adam = Adam::new(config.lr, &[weight.len(), bias.len()]);

    let inputs: Vec<Vec<f64>> = (0..features.num_rows()).map(|i| features.row_f64(i)).collect();
    let mut items: Vec<usize> = (0..features.num_rows()).filter(|&i| !anchors.is_zero(i)).collect();
    let mut loss_log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        rng.shuffle(&mut items);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in items.chunks(config.batch_size) {
            let x: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let a: Vec<&[f64]> = chunk.iter().map(|&i| anchors.row(i)).collect();
            let losses: Vec<f64> = x
                .iter()
                .zip(&a)
                .map(|(xi, ai)| {
                    let z: Vec<f64> = (0..out_dim)
                        .map(|r| dot(&weight[r * in_dim..(r + 1) * in_dim], xi) + bias[r])
                        .collect();
                    cosine_loss_and_grad(ai, &z).0
                })
                .collect();
            let kept = select_small_loss(&losses, rho);
            let (loss, gw, gb) = kept_loss_and_grad(&weight, &bias, &x, &a, &kept);
            adam.update(&mut [&mut weight, &mut bias], &[&gw, &gb]);
            epoch_loss += loss;
            batches += 1;
        }
        loss_log.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(Projector {
        in_dim,
        out_dim,
        weight,
        bias,
        keep_ratio: rho,
        loss_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_smallest_losses() {
        assert_eq!(select_small_loss(&[0.9, 0.1, 0.5, 0.3], 0.5), vec![1, 3]);
    }

    #[test]
    fn full_ratio_keeps_everything() {
        assert_eq!(select_small_loss(&[0.9, 0.1, 0.5], 1.0), vec![0, 1, 2]);
    }

    #[test]
    fn keeps_at_least_one() {
        assert_eq!(select_small_loss(&[0.9, 0.1, 0.5], 0.01), vec![1]);
    }

    #[test]
    fn aligned_vector_has_zero_loss() {
        let (l, g) = cosine_loss_and_grad(&[0.6, 0.8], &[3.0, 4.0]);
        assert!(l.abs() < 1e-15);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn bad_rho_rejected() {
        let t = FeatureTable::new("v", 1, vec![1.0]).unwrap();
        let a = AnchorTable::from_embeddings(&[1.0], 1).unwrap();
        assert!(train_projection(&t, &a, 0.0, &ProjectionConfig::default()).is_err());
    }
}
