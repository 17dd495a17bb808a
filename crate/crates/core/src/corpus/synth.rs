//! Planted-structure benchmark generator.
//!
//! Users and items get Gaussian latent factors; each user's positives are
//! drawn without replacement with probability proportional to
//! `softmax(<user, item>)`, and every modality's clean feature is a fixed
//! random linear image of the item latent plus isotropic noise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::FeatureTable;
use super::interactions::{split_dataset, InteractionSet, SplitDataset, SplitRatios};
use crate::corruptor::PermRecord;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub edges_per_user: usize,
    pub feature_noise_std: f64,
    /// `(modality tag, feature dimension)` pairs.
    pub modality_dims: Vec<(String, usize)>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_users: 800,
            num_items: 500,
            latent_dim: 16,
            edges_per_user: 20,
            feature_noise_std: 0.1,
            modality_dims: vec![("v".into(), 64), ("t".into(), 32)],
        }
    }
}

/// Ground truth kept for recovery checks.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub latent_dim: usize,
    /// `num_users x latent_dim`, row-major.
    pub user_latent: Vec<f64>,
    /// `num_items x latent_dim`, row-major.
    pub item_latent: Vec<f64>,
    /// Per modality: row of the current table holding item `i`'s own feature.
    pub true_feature_rows: BTreeMap<String, Vec<usize>>,
    pub clean_features: Vec<FeatureTable>,
}

impl SynthTruth {
    /// Updates the row mapping after the given permutation was applied to
    /// the modality's table.
    pub fn record_permutation(&mut self, record: &PermRecord) {
        let rows = self
            .true_feature_rows
            .entry(record.modality.clone())
            .or_insert_with(|| (0..self.item_latent.len() / self.latent_dim).collect());
        // Row `subset[k]` now holds what row `source[k]` held before.
        let before = rows.clone();
        let mut position_of = vec![0usize; before.len()];
        for (item, &row) in before.iter().enumerate() {
            position_of[row] = item;
        }
        for (&dst, &src) in record.subset.iter().zip(&record.source) {
            rows[position_of[src]] = dst;
        }
    }

    pub fn clean(&self, modality: &str) -> Option<&FeatureTable> {
        self.clean_features.iter().find(|t| t.modality() == modality)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub split: SplitDataset,
    pub features: Vec<FeatureTable>,
    pub truth: SynthTruth,
}

/// Weighted sampling of `count` distinct indices by sequential categorical
/// draws over the remaining mass.
pub fn sample_weighted_distinct(weights: &[f64], count: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut total: f64 = remaining.iter().sum();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        if total <= 0.0 {
            break;
        }
        let target = rng.next_f64() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (idx, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            chosen = Some(idx);
            if acc > target {
                break;
            }
        }
        let idx = chosen.expect("positive total mass");
        picked.push(idx);
        remaining[idx] = 0.0;
        // Recompute instead of subtracting to avoid drift.
        total = remaining.iter().sum();
    }
    picked
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    let (m, n, d) = (spec.num_users, spec.num_items, spec.latent_dim);
    if m == 0 || n == 0 || d == 0 || spec.edges_per_user == 0 {
        return Err(Error::invalid("synthetic counts must be positive"));
    }
    if spec.edges_per_user > n {
        return Err(Error::invalid(format!(
            "edges_per_user {} exceeds item count {n}",
            spec.edges_per_user
        )));
    }
    if spec.modality_dims.iter().any(|(_, dim)| *dim == 0) || !(spec.feature_noise_std >= 0.0) {
        return Err(Error::invalid("modality dimensions must be positive and noise std nonnegative"));
    }

    let mut latent_rng = SplitMix64::derive(seed, "synth.latent");
    let user_latent: Vec<f64> = (0..m * d).map(|_| latent_rng.normal()).collect();
    let item_latent: Vec<f64> = (0..n * d).map(|_| latent_rng.normal()).collect();

    let mut edge_rng = SplitMix64::derive(seed, "synth.edges");
    let mut edges = Vec::with_capacity(m * spec.edges_per_user);
    let mut logits = vec![0.0; n];
    for u in 0..m {
        let pu = &user_latent[u * d..(u + 1) * d];
        for (i, logit) in logits.iter_mut().enumerate() {
            *logit = dot(pu, &item_latent[i * d..(i + 1) * d]);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
        for i in sample_weighted_distinct(&weights, spec.edges_per_user, &mut edge_rng) {
            edges.push((u as u32, i as u32));
        }
    }
    let interactions = InteractionSet::new(m, n, edges)?;

    let mut clean_features = Vec::with_capacity(spec.modality_dims.len());
    for (tag, dim) in &spec.modality_dims {
        let mut rng = SplitMix64::derive(seed, &format!("synth.features.{tag}"));
        let scale = 1.0 / (d as f64).sqrt();
        let map: Vec<f64> = (0..dim * d).map(|_| rng.normal() * scale).collect();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            let qi = &item_latent[i * d..(i + 1) * d];
            for r in 0..*dim {
                let clean = dot(&map[r * d..(r + 1) * d], qi);
                let noise = if spec.feature_noise_std > 0.0 {
                    spec.feature_noise_std * rng.normal()
                } else {
                    0.0
                };
                data.push((clean + noise) as f32);
            }
        }
        clean_features.push(FeatureTable::new(tag.clone(), *dim, data)?);
    }

    let split = split_dataset(&interactions, SplitRatios::default(), seed)?;
    let true_feature_rows = spec
        .modality_dims
        .iter()
        .map(|(tag, _)| (tag.clone(), (0..n).collect()))
        .collect();
    Ok(SynthData {
        split,
        features: clean_features.clone(),
        truth: SynthTruth {
            latent_dim: d,
            user_latent,
            item_latent,
            true_feature_rows,
            clean_features,
        },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
