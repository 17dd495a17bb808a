//! Oracles shared by the integration suites and the acceptance target.
#![allow(dead_code)]

use trustrec::backbone::{
    bpr_loss, bpr_loss_and_grad, build_norm_adjacency, BackboneKind, EmbeddingModel, ModelShape, Triplet,
};
use trustrec::corpus::{FeatureTable, InteractionSet};
use trustrec::rectifier::kept_loss_and_grad;

/// Small deterministic generator for test data, independent of the crate's.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut x = self.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51afd7ed558ccd);
        x ^ (x >> 33)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;
/// Entries where both gradients are below this are compared absolutely
/// (relative error is meaningless at zero).
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Relative disagreement between analytic and numeric derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < FD_ABS_FLOOR {
        (analytic - numeric).abs() / FD_ABS_FLOOR
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// A random toy instance for `kind`: 5 users, 7 items, d = 4, two layers,
/// two modalities (vbpr / modality_knn).
pub struct ToyInstance {
    pub model: EmbeddingModel,
    pub train: InteractionSet,
    pub batch: Vec<Triplet>,
}

pub fn toy_features(rng: &mut Lcg, items: usize) -> Vec<FeatureTable> {
    [("v", 3usize), ("t", 2usize)]
        .iter()
        .map(|&(tag, dim)| {
            let data = (0..items * dim).map(|_| rng.range(-1.0, 1.0) as f32).collect();
            FeatureTable::new(tag, dim, data).unwrap()
        })
        .collect()
}

pub fn toy_instance(kind: BackboneKind, seed: u64) -> ToyInstance {
    let (m, n) = (5usize, 7usize);
    let mut rng = Lcg(seed.wrapping_mul(7919).wrapping_add(kind as u64));
    let mut edges: Vec<(u32, u32)> = (0..m as u32).map(|u| (u, rng.below(n) as u32)).collect();
    for _ in 0..10 {
        edges.push((rng.below(m) as u32, rng.below(n) as u32));
    }
    let train = InteractionSet::new(m, n, edges).unwrap();
    let features = toy_features(&mut rng, n);
    let shape = ModelShape {
        dim: 4,
        layers: 2,
        knn_k: 2,
    };
    let mut model = EmbeddingModel::new(kind, m, n, shape, &features, seed).unwrap();
    // Larger than Xavier scale so every term of the objective is exercised.
    for table in model.params.tables_mut() {
        for v in table.iter_mut() {
            *v = rng.range(-1.0, 1.0);
        }
    }
    let positives = train.items_by_user();
    let batch = (0..6)
        .map(|_| {
            let u = rng.below(m);
            let pos = positives[u][rng.below(positives[u].len())];
            let neg = loop {
                let j = rng.below(n) as u32;
                if !positives[u].contains(&j) {
                    break j;
                }
            };
            Triplet {
                user: u as u32,
                pos,
                neg,
            }
        })
        .collect();
    ToyInstance { model, train, batch }
}

/// Largest relative error over every entry of every parameter table
/// (central differences, step [`FD_STEP`]).
pub fn bpr_gradient_error(inst: &ToyInstance, l2: f64) -> f64 {
    let graph = build_norm_adjacency(&inst.train);
    let g = inst.model.kind().propagates().then_some(&graph);
    let (_, grads) = bpr_loss_and_grad(&inst.model, g, &inst.batch, l2, true).unwrap();
    let grads: Vec<Vec<f64>> = grads.tables().iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let sizes = inst.model.params.table_sizes();
    for (t, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            let eval = |delta: f64| {
                let mut m = inst.model.clone();
                m.params.tables_mut()[t][k] += delta;
                bpr_loss(&m, g, &inst.batch, l2).unwrap()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[t][k], numeric));
        }
    }
    worst
}

/// A random projection problem: 6 items, inputs in R^3, anchors on the unit
/// sphere of R^4, keeping 4 of 6.
pub struct ProjectionInstance {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<f64>>,
    pub kept: Vec<usize>,
}

pub fn projection_instance(seed: u64) -> ProjectionInstance {
    let mut rng = Lcg(seed ^ 0x5151);
    let (n, din, dout) = (6usize, 3usize, 4usize);
    let inputs = (0..n).map(|_| (0..din).map(|_| rng.range(-1.0, 1.0)).collect()).collect();
    let anchors = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dout).map(|_| rng.range(-1.0, 1.0)).collect();
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / len).collect()
        })
        .collect();
    ProjectionInstance {
        weight: (0..dout * din).map(|_| rng.range(-1.0, 1.0)).collect(),
        bias: (0..dout).map(|_| rng.range(-0.5, 0.5)).collect(),
        inputs,
        anchors,
        kept: vec![0, 2, 3, 5],
    }
}

pub fn projection_gradient_error(p: &ProjectionInstance) -> f64 {
    let inputs: Vec<&[f64]> = p.inputs.iter().map(Vec::as_slice).collect();
    let anchors: Vec<&[f64]> = p.anchors.iter().map(Vec::as_slice).collect();
    let (_, gw, gb) = kept_loss_and_grad(&p.weight, &p.bias, &inputs, &anchors, &p.kept);
    let loss = |w: &[f64], b: &[f64]| kept_loss_and_grad(w, b, &inputs, &anchors, &p.kept).0;
    let mut worst: f64 = 0.0;
    for k in 0..p.weight.len() {
        let (mut plus, mut minus) = (p.weight.clone(), p.weight.clone());
        plus[k] += FD_STEP;
        minus[k] -= FD_STEP;
        let numeric = (loss(&plus, &p.bias) - loss(&minus, &p.bias)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gw[k], numeric));
    }
    for k in 0..p.bias.len() {
        let (mut plus, mut minus) = (p.bias.clone(), p.bias.clone());
        plus[k] += FD_STEP;
        minus[k] -= FD_STEP;
        let numeric = (loss(&p.weight, &plus) - loss(&p.weight, &minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gb[k], numeric));
    }
    worst
}

// ----------------------------------------------------------------- sinkhorn

/// Dense reference: `u = 1/(A v + eps)`, `v = 1/(A^T u + eps)` from `v = 1`
/// for exactly `iters` rounds. Returns `P` row-major.
pub fn dense_sinkhorn(a: &[f64], n: usize, eps: f64, iters: usize) -> Vec<f64> {
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for _ in 0..iters {
        for r in 0..n {
            let s: f64 = (0..n).map(|c| a[r * n + c] * v[c]).sum();
            u[r] = 1.0 / (s + eps);
        }
        for c in 0..n {
            let s: f64 = (0..n).map(|r| a[r * n + c] * u[r]).sum();
            v[c] = 1.0 / (s + eps);
        }
    }
    (0..n * n).map(|k| u[k / n] * a[k] * v[k % n]).collect()
}

pub fn dense_deviation(p: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..n {
        worst = worst.max(((0..n).map(|c| p[r * n + c]).sum::<f64>() - 1.0).abs());
    }
    for c in 0..n {
        worst = worst.max(((0..n).map(|r| p[r * n + c]).sum::<f64>() - 1.0).abs());
    }
    worst
}

// ------------------------------------------------------------------ metrics

/// Brute-force ranking: sort unfiltered items by (score desc, index asc).
pub fn brute_rank(scores: &[f64], filtered: &[u32]) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len()).filter(|i| !filtered.contains(&(*i as u32))).collect();
    // Insertion sort: deliberately unlike the library's sort.
    for a in 1..items.len() {
        let mut b = a;
        while b > 0 {
            let (x, y) = (items[b - 1], items[b]);
            let swap = scores[y] > scores[x] || (scores[y] == scores[x] && y < x);
            if !swap {
                break;
            }
            items.swap(b - 1, b);
            b -= 1;
        }
    }
    items
}

pub fn brute_recall(ranked: &[usize], truth: &[u32], k: usize) -> f64 {
    let hits = ranked.iter().take(k).filter(|i| truth.contains(&(**i as u32))).count();
    hits as f64 / truth.len() as f64
}

pub fn brute_ndcg(ranked: &[usize], truth: &[u32], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (p, i) in ranked.iter().take(k).enumerate() {
        if truth.contains(&(*i as u32)) {
            dcg += 1.0 / ((p + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..k.min(truth.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    dcg / ideal
}
