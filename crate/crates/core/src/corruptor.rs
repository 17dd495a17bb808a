//! Seeded injection of modality misalignment and interaction noise.

use std::collections::HashSet;

use crate::corpus::{Edge, FeatureTable, InteractionSet};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::util::floor_count;

/// Ratios for one corruption run.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    /// `(modality tag, eta_m)`; each in `[0, 0.5]`.
    pub eta_m: Vec<(String, f64)>,
    /// In `[-0.5, 0.5]`; negative deletes, positive adds.
    pub eta_e: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (tag, eta) in &self.eta_m {
            check_eta_m(*eta).map_err(|_| Error::invalid(format!("eta_m for `{tag}` must be in [0, 0.5], got {eta}")))?;
        }
        check_eta_e(self.eta_e)
    }

    pub fn eta_for(&self, modality: &str) -> f64 {
        self.eta_m
            .iter()
            .find(|(tag, _)| tag == modality)
            .map_or(0.0, |(_, eta)| *eta)
    }
}

fn check_eta_m(eta: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&eta) {
        return Err(Error::invalid(format!("eta_m must be in [0, 0.5], got {eta}")));
    }
    Ok(())
}

fn check_eta_e(eta: f64) -> Result<()> {
    if !(-0.5..=0.5).contains(&eta) {
        return Err(Error::invalid(format!("eta_e must be in [-0.5, 0.5], got {eta}")));
    }
    Ok(())
}

/// Which rows were permuted and how: after corruption, row `subset[k]`
/// holds the feature originally at row `source[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermRecord {
    pub modality: String,
    /// Sorted corrupted subset.
    pub subset: Vec<usize>,
    pub source: Vec<usize>,
}

impl PermRecord {
    /// Rows whose content actually changed (fixed points excluded).
    pub fn moved_rows(&self) -> Vec<usize> {
        self.subset
            .iter()
            .zip(&self.source)
            .filter(|(d, s)| d != s)
            .map(|(&d, _)| d)
            .collect()
    }

    /// TSV audit: `row<TAB>source_row`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# modality={} corrupted={}\n", self.modality, self.subset.len());
        for (d, s) in self.subset.iter().zip(&self.source) {
            out.push_str(&format!("{d}\t{s}\n"));
        }
        out
    }
}

/// Uniformly samples `floor(eta_m * N)` rows and applies a uniform random
/// permutation among them (fixed points allowed). The stream is keyed by
/// the modality tag so modalities corrupt independently.
pub fn permute_modality(features: &FeatureTable, eta_m: f64, seed: u64) -> Result<(FeatureTable, PermRecord)> {
    check_eta_m(eta_m)?;
    let n = features.num_rows();
    let count = floor_count(eta_m, n);
    let mut rng = SplitMix64::derive(seed, &format!("corrupt.{}", features.modality()));
    let mut subset = rng.sample_indices(n, count);
    subset.sort_unstable();
    let mut source = subset.clone();
    rng.shuffle(&mut source);

    let dim = features.dim();
    let mut data = features.as_slice().to_vec();
    for (&dst, &src) in subset.iter().zip(&source) {
        data[dst * dim..(dst + 1) * dim].copy_from_slice(features.row(src));
    }
    let table = FeatureTable::new(features.modality(), dim, data)?;
    Ok((
        table,
        PermRecord {
            modality: features.modality().to_owned(),
            subset,
            source,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct EdgeCorruption {
    pub edges: InteractionSet,
    pub added: Vec<Edge>,
    pub removed: Vec<Edge>,
}

impl EdgeCorruption {
    /// TSV audit: `op<TAB>user<TAB>item` with op `+` or `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (op, list) in [('-', &self.removed), ('+', &self.added)] {
            for (u, i) in list {
                out.push_str(&format!("{op}\t{u}\t{i}\n"));
            }
        }
        out
    }
}

/// Deletes or adds `floor(|eta_e| * |E|)` uniformly chosen edges. Added pairs
/// are rejection-sampled from pairs absent in `train` only.
pub fn corrupt_edges(train: &InteractionSet, eta_e: f64, seed: u64) -> Result<EdgeCorruption> {
    check_eta_e(eta_e)?;
    let count = floor_count(eta_e.abs(), train.len());
    let mut rng = SplitMix64::derive(seed, "corrupt.edges");
    if count == 0 {
        return Ok(EdgeCorruption {
            edges: train.clone(),
            added: Vec::new(),
            removed: Vec::new(),
        });
    }
    let (m, n) = (train.num_users(), train.num_items());
    if eta_e < 0.0 {
        let mut picks = rng.sample_indices(train.len(), count);
        picks.sort_unstable();
        let removed: Vec<Edge> = picks.iter().map(|&k| train.edges()[k]).collect();
        let drop: HashSet<usize> = picks.into_iter().collect();
        let kept = train
            .edges()
            .iter()
            .enumerate()
            .filter(|(k, _)| !drop.contains(k))
            .map(|(_, &e)| e);
        return Ok(EdgeCorruption {
            edges: InteractionSet::new(m, n, kept)?,
            added: Vec::new(),
            removed,
        });
    }

    let free = m * n - train.len();
    if free < count {
        return Err(Error::Infeasible(format!(
            "cannot add {count} edges: only {free} user-item pairs are absent"
        )));
    }
    let mut chosen: HashSet<Edge> = HashSet::with_capacity(count);
    let mut added = Vec::with_capacity(count);
    while added.len() < count {
        let pair = (rng.below(m) as u32, rng.below(n) as u32);
        if !train.contains(pair.0, pair.1) && chosen.insert(pair) {
            added.push(pair);
        }
    }
    let edges = InteractionSet::new(m, n, train.edges().iter().copied().chain(added.iter().copied()))?;
    added.sort_unstable();
    Ok(EdgeCorruption {
        edges,
        added,
        removed: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize, dim: usize) -> FeatureTable {
        let data = (0..n * dim).map(|k| k as f32 * 0.5 - 3.0).collect();
        FeatureTable::new("v", dim, data).unwrap()
    }

    fn sorted_rows(t: &FeatureTable) -> Vec<Vec<u32>> {
        let mut rows: Vec<Vec<u32>> = t.rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows
    }

    fn graph(m: usize, n: usize, count: usize, seed: u64) -> InteractionSet {
        let mut rng = SplitMix64::new(seed);
        let mut edges = HashSet::new();
        while edges.len() < count {
            edges.insert((rng.below(m) as u32, rng.below(n) as u32));
        }
        InteractionSet::new(m, n, edges).unwrap()
    }

    #[test]
    fn zero_eta_is_identity() {
        let t = table(10, 3);
        let (out, rec) = permute_modality(&t, 0.0, 1).unwrap();
        assert_eq!(out, t);
        assert!(rec.subset.is_empty());
    }

    #[test]
    fn floor_can_empty_the_subset() {
        let t = table(10, 3);
        let (out, rec) = permute_modality(&t, 0.05, 1).unwrap();
        assert_eq!(out, t);
        assert!(rec.subset.is_empty());
    }

    #[test]
    fn half_corruption_matches_replay() {
        let t = table(10, 3);
        let (out, rec) = permute_modality(&t, 0.5, 7).unwrap();
        assert_eq!(rec.subset.len(), 5);

        // Independent replay of the same draws.
        let mut rng = SplitMix64::derive(7, "corrupt.v");
        let mut pool: Vec<usize> = (0..10).collect();
        for i in 0..5 {
            let j = i + rng.below(10 - i);
            pool.swap(i, j);
        }
        let mut subset = pool[..5].to_vec();
        subset.sort_unstable();
        let mut source = subset.clone();
        for i in (1..5).rev() {
            let j = rng.below(i + 1);
            source.swap(i, j);
        }
        assert_eq!(rec.subset, subset);
        assert_eq!(rec.source, source);

        let changed: Vec<usize> = (0..10).filter(|&i| out.row(i) != t.row(i)).collect();
        assert!(changed.len() <= 5);
        assert!(changed.iter().all(|i| subset.contains(i)));
        assert_eq!(changed, rec.moved_rows());
        assert_eq!(sorted_rows(&out), sorted_rows(&t));
    }

    #[test]
    fn modalities_corrupt_independently() {
        let v = table(40, 2);
        let t = table(40, 2).with_modality("t");
        let (_, rv) = permute_modality(&v, 0.3, 5).unwrap();
        let (_, rt) = permute_modality(&t, 0.3, 5).unwrap();
        assert_ne!(rv.subset, rt.subset);
    }

    #[test]
    fn eta_out_of_range_rejected() {
        assert!(permute_modality(&table(4, 1), 0.6, 1).is_err());
        assert!(corrupt_edges(&graph(5, 5, 10, 1), -0.7, 1).is_err());
    }

    #[test]
    fn zero_edge_noise_is_identity() {
        let g = graph(10, 20, 100, 3);
        assert_eq!(corrupt_edges(&g, 0.0, 9).unwrap().edges, g);
    }

    #[test]
    fn deletion_removes_exact_count() {
        let g = graph(10, 20, 100, 3);
        let out = corrupt_edges(&g, -0.15, 9).unwrap();
        assert_eq!(out.edges.len(), 85);
        assert!(out.edges.is_subset_of(&g));
        assert_eq!(out.removed.len(), 15);
    }

    #[test]
    fn addition_adds_fresh_pairs() {
        let g = graph(10, 20, 100, 3);
        let out = corrupt_edges(&g, 0.15, 9).unwrap();
        assert_eq!(out.edges.len(), 115);
        let fresh = out.edges.difference(&g).unwrap();
        assert_eq!(fresh.len(), 15);
        assert_eq!(fresh.edges(), out.added.as_slice());
        assert!(g.is_subset_of(&out.edges));
    }

    #[test]
    fn addition_infeasible_on_complete_graph() {
        let full = InteractionSet::new(3, 3, (0..3).flat_map(|u| (0..3).map(move |i| (u, i)))).unwrap();
        assert!(matches!(corrupt_edges(&full, 0.5, 1), Err(Error::Infeasible(_))));
    }
}
