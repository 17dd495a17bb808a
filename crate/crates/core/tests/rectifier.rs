mod common;

use common::{dense_deviation, dense_sinkhorn, Lcg};
use proptest::prelude::*;
use trustrec::backbone::{build_norm_adjacency, BackboneKind, EmbeddingModel, ModelShape, SparseRowGraph, TrainConfig};
use trustrec::corpus::{synth_generate, FeatureTable, InteractionSet, SplitDataset, SynthSpec};
use trustrec::rectifier::{
    anchors_from_model, build_affinity_from_projected, compute_anchors, marginal_deviation, rectify, rectify_pipeline,
    rectify_with_anchors, row_normalize, sinkhorn, train_projection, AnchorConfig, AnchorTable, ProjectionConfig,
    RectifyConfig, SinkhornConfig, SoftMatching, SparseAffinity,
};

fn unit_rows(rng: &mut Lcg, n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.range(-1.0, 1.0)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.into_iter().map(|x| x / len));
    }
    out
}

fn affinity_from_dense(a: &[f64], n: usize) -> SparseAffinity {
    let rows = (0..n)
        .map(|r| (0..n).filter(|&c| a[r * n + c] > 0.0).map(|c| (c as u32, a[r * n + c])).collect())
        .collect();
    SparseAffinity {
        matrix: SparseRowGraph::from_rows(n, rows),
        k: n,
        tau: 1.0,
    }
}

// ------------------------------------------------------------------ anchors

#[test]
fn anchors_match_dense_propagation_oracle() {
    // Two users, two items: u0-i0, u0-i1, u1-i1.
    let train = InteractionSet::new(2, 2, [(0, 0), (0, 1), (1, 1)]).unwrap();
    let empty = InteractionSet::empty(2, 2);
    let split = SplitDataset::from_parts(train, empty.clone(), empty).unwrap();
    let config = AnchorConfig {
        shape: ModelShape {
            dim: 3,
            layers: 2,
            knn_k: 1,
        },
        train: TrainConfig {
            max_epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        },
    };
    let anchors = compute_anchors(&split, &config).unwrap();
    let p = &anchors.encoder.params;

    // Dense normalized adjacency over [u0, u1, i0, i1].
    let s2 = 1.0 / 2f64.sqrt();
    #[rustfmt::skip]
    let a = [
        0.0, 0.0, s2, 0.5,
        0.0, 0.0, 0.0, s2,
        s2, 0.0, 0.0, 0.0,
        0.5, s2, 0.0, 0.0,
    ];
    let mut e0 = p.user.clone();
    e0.extend_from_slice(&p.item);
    let mut cur = e0.clone();
    let mut sum = e0.clone();
    for _ in 0..2 {
        let mut next = vec![0.0; 12];
        for r in 0..4 {
            for c in 0..4 {
                for k in 0..3 {
                    next[r * 3 + k] += a[r * 4 + c] * cur[c * 3 + k];
                }
            }
        }
        sum.iter_mut().zip(&next).for_each(|(s, v)| *s += v);
        cur = next;
    }
    for i in 0..2 {
        let row: Vec<f64> = sum[(2 + i) * 3..(3 + i) * 3].iter().map(|v| v / 3.0).collect();
        let len = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..3 {
            assert!((anchors.table.row(i)[k] - row[k] / len).abs() < 1e-6);
        }
    }
}

#[test]
fn isolated_zero_item_gives_flagged_zero_anchor() {
    let train = InteractionSet::new(2, 3, [(0, 0), (1, 1)]).unwrap();
    let mut model = EmbeddingModel::new(BackboneKind::Lightgcn, 2, 3, ModelShape { dim: 4, ..ModelShape::default() }, &[], 1).unwrap();
    model.params.item[2 * 4..3 * 4].iter_mut().for_each(|v| *v = 0.0);
    model.propagate(&build_norm_adjacency(&train)).unwrap();
    let table = anchors_from_model(&model).unwrap();
    assert_eq!(table.zero_rows(), &[2]);
    for i in 0..3 {
        let len = table.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(len == 0.0 || (len - 1.0).abs() < 1e-6);
    }
}

// --------------------------------------------------------------- projection

#[test]
fn projection_recovers_a_clean_linear_map() {
    let mut rng = Lcg(21);
    let (n, din, dout) = (300, 8, 6);
    let x: Vec<f64> = (0..n * din).map(|_| rng.range(-1.0, 1.0)).collect();
    let map: Vec<f64> = (0..dout * din).map(|_| rng.range(-1.0, 1.0)).collect();
    let mut y = Vec::with_capacity(n * dout);
    for i in 0..n {
        for r in 0..dout {
            y.push((0..din).map(|c| map[r * din + c] * x[i * din + c]).sum::<f64>());
        }
    }
    let anchors = AnchorTable::from_embeddings(&y, dout).unwrap();
    let features = FeatureTable::new("v", din, x.iter().map(|&v| v as f32).collect()).unwrap();
    let projector = train_projection(&features, &anchors, 1.0, &ProjectionConfig::default()).unwrap();
    let final_loss = *projector.loss_log.last().unwrap();
    assert!(final_loss < 0.1, "final loss {final_loss}");
    assert!(final_loss < projector.loss_log[0]);
    assert!(train_projection(&features, &anchors, 0.0, &ProjectionConfig::default()).is_err());
}

// ----------------------------------------------------------------- affinity

#[test]
fn affinity_matches_brute_force_enumeration() {
    let mut rng = Lcg(6);
    let (n, d, k, tau) = (6, 3, 2, 0.1);
    for _ in 0..20 {
        let anchor_rows = unit_rows(&mut rng, n, d);
        let anchors = AnchorTable::from_embeddings(&anchor_rows, d).unwrap();
        let projected = unit_rows(&mut rng, n, d);
        let aff = build_affinity_from_projected(&anchors, &projected, k, tau).unwrap();
        for i in 0..n {
            let sims: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|c| anchors.row(i)[c] * projected[j * d + c]).sum())
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
            let mut want: Vec<usize> = order[..k].to_vec();
            if !want.contains(&i) {
                want.push(i);
            }
            want.sort_unstable();
            let (cols, vals) = aff.matrix.row(i);
            let got: Vec<usize> = cols.iter().map(|&c| c as usize).collect();
            assert_eq!(got, want, "row {i}");
            for (&c, &v) in cols.iter().zip(vals) {
                assert!((v - (sims[c as usize] / tau).exp()).abs() <= 1e-6 * v.max(1.0));
            }
        }
    }
}

#[test]
fn large_k_gives_dense_rows_and_identical_inputs_peak_on_diagonal() {
    let d = 4;
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i * d + i] = 1.0;
    }
    let anchors = AnchorTable::from_embeddings(&eye, d).unwrap();
    let aff = build_affinity_from_projected(&anchors, &eye, 10, 0.1).unwrap();
    for i in 0..d {
        let (cols, vals) = aff.matrix.row(i);
        assert_eq!(cols.len(), d);
        let diag = vals[cols.iter().position(|&c| c as usize == i).unwrap()];
        assert_eq!(diag, (1.0f64 / 0.1).exp());
        assert!(vals.iter().all(|&v| v <= diag));
    }
}

// ----------------------------------------------------------------- sinkhorn

#[test]
fn two_by_two_matches_dense_reference() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let cfg = SinkhornConfig {
        eps: 1e-8,
        max_iter: 200,
        tol: 0.0,
    };
    let p = sinkhorn(&affinity_from_dense(&a, 2), &cfg).unwrap();
    let want = dense_sinkhorn(&a, 2, 1e-8, 200);
    let got = p.matrix.to_dense();
    for k in 0..4 {
        assert!((got[k] - want[k]).abs() < 1e-6);
    }
    assert_eq!(p.iterations, 200);
}

#[test]
fn permutation_support_gives_the_permutation() {
    let perm = [2usize, 0, 3, 1];
    let mut a = vec![0.0; 16];
    for (r, &c) in perm.iter().enumerate() {
        a[r * 4 + c] = 0.5 + r as f64;
    }
    let cfg = SinkhornConfig {
        eps: 1e-14,
        max_iter: 50,
        tol: 1e-12,
    };
    let p = sinkhorn(&affinity_from_dense(&a, 4), &cfg).unwrap().matrix.to_dense();
    for r in 0..4 {
        for c in 0..4 {
            let want = if perm[r] == c { 1.0 } else { 0.0 };
            assert!((p[r * 4 + c] - want).abs() <= 1e-10);
        }
    }
}

fn arb_sparse_affinity() -> impl Strategy<Value = SparseAffinity> {
    (2usize..15, 1usize..5, any::<u64>()).prop_map(|(n, k, seed)| {
        let mut rng = Lcg(seed);
        let d = 3;
        let anchors = AnchorTable::from_embeddings(&unit_rows(&mut rng, n, d), d).unwrap();
        let projected = unit_rows(&mut rng, n, d);
        build_affinity_from_projected(&anchors, &projected, k, 0.1).unwrap()
    })
}

proptest! {
    #[test]
    fn sinkhorn_keeps_pattern_and_improves_marginals(aff in arb_sparse_affinity()) {
        let p = sinkhorn(&aff, &SinkhornConfig::default()).unwrap();
        prop_assert!(p.matrix.same_pattern(&aff.matrix));
        prop_assert!(p.matrix.values().iter().all(|&v| v >= 0.0));
        prop_assert!(aff.matrix.values().iter().all(|&v| v > 0.0));
        // With the stabilizer every marginal is exactly `1 - eps * u_r` or
        // `1 - eps * v_c` at a fixed point, so eps can cost up to that much
        // even when the row-normalized start is already balanced.
        let slack = p.eps * p.u.iter().chain(&p.v).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(p.deviation <= p.initial_deviation + slack + 1e-12,
            "final {} initial {} slack {}", p.deviation, p.initial_deviation, slack);
        prop_assert!((marginal_deviation(&p.matrix) - p.deviation).abs() < 1e-9);
        // Diagonal in every row, so every column is populated.
        for i in 0..aff.num_rows() {
            prop_assert!(aff.matrix.row(i).0.contains(&(i as u32)));
        }
    }
}

#[test]
fn random_dense_matrices_converge() {
    let mut rng = Lcg(77);
    for _ in 0..10 {
        let n = 3 + rng.below(10);
        let a: Vec<f64> = (0..n * n).map(|_| rng.range(0.05, 2.0)).collect();
        let cfg = SinkhornConfig {
            eps: 1e-8,
            max_iter: 200,
            tol: 0.0,
        };
        let p = sinkhorn(&affinity_from_dense(&a, n), &cfg).unwrap();
        let want = dense_sinkhorn(&a, n, 1e-8, 200);
        assert!(dense_deviation(&want, n) <= 1e-3);
        for (x, y) in p.matrix.to_dense().iter().zip(&want) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

// ------------------------------------------------------------------ rectify

fn matching_from_rows(n: usize, rows: Vec<Vec<(u32, f64)>>) -> SoftMatching {
    SoftMatching {
        matrix: SparseRowGraph::from_rows(n, rows),
        u: vec![1.0; n],
        v: vec![1.0; n],
        eps: 1e-8,
        iterations: 0,
        initial_deviation: 0.0,
        deviation: 0.0,
    }
}

#[test]
fn hand_built_matching_mixes_as_expected() {
    let x = FeatureTable::from_rows("v", &[vec![1.0, 0.0], vec![0.0, 2.0], vec![4.0, 4.0]]).unwrap();
    let p = matching_from_rows(
        3,
        vec![
            vec![(0, 0.5), (1, 0.5)],
            vec![(1, 0.25), (2, 0.75)],
            vec![(0, 1.0)],
        ],
    );
    let out = rectify(&x, &p, 0.5).unwrap();
    // row0: 0.5*(1,0) + 0.5*(0.5,1)   row1: 0.5*(0,2) + 0.5*(3,3.5)   row2: 0.5*(4,4) + 0.5*(1,0)
    let want = [[0.75, 0.5], [1.5, 2.75], [2.5, 2.0]];
    for i in 0..3 {
        for k in 0..2 {
            assert!((f64::from(out.row(i)[k]) - want[i][k]).abs() < 1e-7);
        }
    }
}

#[test]
fn identity_matching_and_unit_lambda_are_no_ops() {
    let mut rng = Lcg(3);
    let x = FeatureTable::new("t", 3, (0..15).map(|_| rng.range(-2.0, 2.0) as f32).collect()).unwrap();
    let eye = matching_from_rows(5, (0..5).map(|i| vec![(i as u32, 1.0)]).collect());
    for lambda in [0.0, 0.3, 0.5, 1.0] {
        let out = rectify(&x, &eye, lambda).unwrap();
        for (a, b) in out.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0));
        }
    }
    let dense = matching_from_rows(5, (0..5).map(|_| (0..5).map(|j| (j, 0.2)).collect()).collect());
    assert_eq!(rectify(&x, &dense, 1.0).unwrap().as_slice(), x.as_slice());
    assert!(rectify(&x, &dense, 1.5).is_err());
}

// ----------------------------------------------------------------- pipeline

fn small_synth() -> trustrec::corpus::SynthData {
    let spec = SynthSpec {
        num_users: 120,
        num_items: 80,
        latent_dim: 8,
        edges_per_user: 10,
        feature_noise_std: 0.1,
        modality_dims: vec![("v".into(), 12), ("t".into(), 6)],
    };
    synth_generate(&spec, 2).unwrap()
}

fn quick_anchor_config() -> AnchorConfig {
    AnchorConfig {
        shape: ModelShape {
            dim: 16,
            ..ModelShape::default()
        },
        train: TrainConfig {
            lr: 0.01,
            max_epochs: 10,
            seed: 2,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn pipeline_with_unit_lambda_returns_inputs() {
    let data = small_synth();
    let config = RectifyConfig {
        lambda: 1.0,
        projection: ProjectionConfig {
            epochs: 5,
            ..ProjectionConfig::default()
        },
        ..RectifyConfig::default()
    };
    let out = rectify_pipeline(&data.split, &data.features, &[], &config, &quick_anchor_config()).unwrap();
    for (a, b) in out.features.iter().zip(&data.features) {
        assert_eq!(a, b);
    }
}

#[test]
fn provenance_records_defaults_and_ablation_variants() {
    let data = small_synth();
    let anchors = compute_anchors(&data.split, &quick_anchor_config()).unwrap().table;
    let eta = vec![("v".to_string(), 0.2), ("t".to_string(), 0.2)];
    let base = RectifyConfig {
        projection: ProjectionConfig {
            epochs: 5,
            ..ProjectionConfig::default()
        },
        ..RectifyConfig::default()
    };
    let full = rectify_with_anchors(&anchors, &data.features, &eta, &base).unwrap();
    assert_eq!(full.provenance.lambda, 0.5);
    assert_eq!(full.provenance.tau, 0.1);
    assert_eq!(full.provenance.topk, 20);
    assert_eq!(full.provenance.variant, "full");
    assert_eq!(full.provenance.rho_rule, "clean_fraction");
    for m in &full.provenance.modalities {
        assert!((m.keep_ratio - 0.75).abs() < 1e-12);
        assert_eq!(m.matching, "sinkhorn");
        assert_eq!(m.kept_loss_curve.len(), 5);
        assert!(m.final_deviation <= m.initial_deviation);
    }

    let wo_sink = rectify_with_anchors(&anchors, &data.features, &eta, &RectifyConfig { use_sinkhorn: false, ..base.clone() }).unwrap();
    assert_eq!(wo_sink.provenance.variant, "wo_sink");
    assert_eq!(wo_sink.provenance.modalities[0].matching, "row_norm");

    let wo_sl = rectify_with_anchors(&anchors, &data.features, &eta, &RectifyConfig { small_loss: false, ..base }).unwrap();
    assert_eq!(wo_sl.provenance.variant, "wo_sl");
    assert_eq!(wo_sl.provenance.modalities[0].keep_ratio, 1.0);
    assert_ne!(full.features[0], wo_sink.features[0]);
    assert_ne!(full.features[0], wo_sl.features[0]);
}

#[test]
fn row_normalization_is_the_no_sinkhorn_fallback() {
    let a = [1.0, 2.0, 0.0, 4.0];
    let p = row_normalize(&affinity_from_dense(&a, 2));
    assert_eq!(p.matrix.to_dense(), vec![1.0 / 3.0, 2.0 / 3.0, 0.0, 1.0]);
}
