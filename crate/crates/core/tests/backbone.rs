mod common;

use common::{toy_features, Lcg};
use trustrec::backbone::{
    build_norm_adjacency, init_embeddings, load_checkpoint, propagate, save_checkpoint, train, xavier_table,
    BackboneKind, EmbeddingModel, ModelShape, TrainConfig,
};
use trustrec::corpus::{synth_generate, InteractionSet, SynthSpec};
use trustrec::evaluator::{rank_items, validation_recall, PopularityScorer};
use trustrec::rng::SplitMix64;

#[test]
fn xavier_bound_and_variance() {
    let model = init_embeddings(10, 3, 64, 5).unwrap();
    let bound = (6.0f64 / 74.0).sqrt();
    assert_eq!(model.params.user.len(), 10 * 64);
    assert!(model.params.user.iter().all(|v| v.abs() <= bound));
    assert_eq!(init_embeddings(10, 3, 64, 5).unwrap().params, model.params);

    let (rows, cols) = (1000, 100);
    let table = xavier_table(rows, cols, &mut SplitMix64::new(11));
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mean = table.iter().sum::<f64>() / table.len() as f64;
    let var = table.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / table.len() as f64;
    let expect = bound * bound / 3.0;
    assert!((var - expect).abs() / expect < 0.05, "variance {var} vs {expect}");
}

/// Dense symmetric-normalized adjacency over users then items.
fn dense_adjacency(train: &InteractionSet) -> Vec<f64> {
    let (m, n) = (train.num_users(), train.num_items());
    let size = m + n;
    let (du, di) = (train.user_degrees(), train.item_degrees());
    let mut a = vec![0.0; size * size];
    for &(u, i) in train.edges() {
        let w = 1.0 / ((du[u as usize] * di[i as usize]) as f64).sqrt();
        a[u as usize * size + m + i as usize] = w;
        a[(m + i as usize) * size + u as usize] = w;
    }
    a
}

fn dense_propagate(a: &[f64], e0: &[f64], size: usize, dim: usize, layers: usize) -> Vec<f64> {
    let mut cur = e0.to_vec();
    let mut sum = e0.to_vec();
    for _ in 0..layers {
        let mut next = vec![0.0; size * dim];
        for r in 0..size {
            for c in 0..size {
                for k in 0..dim {
                    next[r * dim + k] += a[r * size + c] * cur[c * dim + k];
                }
            }
        }
        sum.iter_mut().zip(&next).for_each(|(s, v)| *s += v);
        cur = next;
    }
    sum.iter().map(|s| s / (layers + 1) as f64).collect()
}

#[test]
fn path_graph_matches_dense_propagation() {
    // u0 - i0 - u1 - i1
    let train = InteractionSet::new(2, 2, [(0, 0), (1, 0), (1, 1)]).unwrap();
    let graph = build_norm_adjacency(&train);
    let e0 = vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 0.5];
    let got = propagate(&graph, &e0, 2, 1).mean;
    // Hand computation: deg u0=1, u1=2, i0=2, i1=1, so w(u0,i0) = w(u1,i1)
    // = 1/sqrt(2) and w(u1,i0) = 1/2.
    let s = 1.0 / 2f64.sqrt();
    let e1 = [
        s * 2.0,
        -s, // u0 <- i0
        0.5 * 2.0 + s * 0.5,
        -0.5 + s * 0.5, // u1 <- i0, i1
        s * 1.0 + 0.5 * 0.0,
        s * 0.0 + 0.5 * 1.0, // i0 <- u0, u1
        s * 0.0,
        s * 1.0, // i1 <- u1
    ];
    for k in 0..8 {
        assert!((got[k] - (e0[k] + e1[k]) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn random_graphs_match_dense_propagation() {
    let mut rng = Lcg(4);
    for _ in 0..10 {
        let (m, n, dim) = (6, 5, 3);
        let edges: Vec<(u32, u32)> = (0..12).map(|_| (rng.below(m) as u32, rng.below(n) as u32)).collect();
        let train = InteractionSet::new(m, n, edges).unwrap();
        let e0: Vec<f64> = (0..(m + n) * dim).map(|_| rng.range(-1.0, 1.0)).collect();
        let want = dense_propagate(&dense_adjacency(&train), &e0, m + n, dim, 3);
        let got = propagate(&build_norm_adjacency(&train), &e0, dim, 3).mean;
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_layers_and_isolated_nodes() {
    let train = InteractionSet::new(2, 3, [(0, 0), (1, 1)]).unwrap();
    let graph = build_norm_adjacency(&train);
    let e0: Vec<f64> = (0..10).map(|k| k as f64 - 4.0).collect();
    assert_eq!(propagate(&graph, &e0, 2, 0).mean, e0);
    // Item 2 is isolated: layers 1 and 2 are zero there.
    let out = propagate(&graph, &e0, 2, 2).mean;
    let row = 2 + 2;
    for k in 0..2 {
        assert!((out[row * 2 + k] - e0[row * 2 + k] / 3.0).abs() < 1e-15);
    }
}

#[test]
fn propagation_is_linear() {
    let mut rng = Lcg(8);
    let edges: Vec<(u32, u32)> = (0..15).map(|_| (rng.below(5) as u32, rng.below(6) as u32)).collect();
    let graph = build_norm_adjacency(&InteractionSet::new(5, 6, edges).unwrap());
    let e0: Vec<f64> = (0..11 * 4).map(|_| rng.range(-1.0, 1.0)).collect();
    let scaled: Vec<f64> = e0.iter().map(|v| 2.5 * v).collect();
    let a = propagate(&graph, &e0, 4, 2).mean;
    let b = propagate(&graph, &scaled, 4, 2).mean;
    for (x, y) in a.iter().zip(&b) {
        assert!((2.5 * x - y).abs() < 1e-12);
    }
}

fn random_model(kind: BackboneKind, seed: u64) -> (EmbeddingModel, InteractionSet, Vec<trustrec::corpus::FeatureTable>) {
    let mut rng = Lcg(seed);
    let (m, n) = (6, 8);
    let mut edges: Vec<(u32, u32)> = (0..m as u32).map(|u| (u, rng.below(n) as u32)).collect();
    edges.extend((0..12).map(|_| (rng.below(m) as u32, rng.below(n) as u32)));
    let train = InteractionSet::new(m, n, edges).unwrap();
    let features = toy_features(&mut rng, n);
    let shape = ModelShape {
        dim: 4,
        layers: 2,
        knn_k: 3,
    };
    let mut model = EmbeddingModel::new(kind, m, n, shape, &features, seed).unwrap();
    model.propagate(&build_norm_adjacency(&train)).unwrap();
    (model, train, features)
}

/// Per-pair score from the declared formulas, computed independently of the
/// model's scoring view.
fn oracle_score(
    model: &EmbeddingModel,
    train: &InteractionSet,
    features: &[trustrec::corpus::FeatureTable],
    u: usize,
    i: usize,
) -> f64 {
    let (m, n, d) = (model.num_users(), model.num_items(), model.dim());
    let p = &model.params;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // projected feature of item j for modality k
    let proj = |k: usize, x: &[f64]| -> Vec<f64> {
        let dm = x.len();
        (0..d).map(|r| dot(&p.proj[k][r * dm..(r + 1) * dm], x)).collect()
    };
    let raw = |k: usize, j: usize| features[k].row_f64(j);
    match model.kind() {
        BackboneKind::Lightgcn | BackboneKind::ModalityKnn => {
            let mut e0 = p.user.clone();
            e0.extend_from_slice(&p.item);
            let mean = dense_propagate(&dense_adjacency(train), &e0, m + n, d, model.layers());
            let eu = &mean[u * d..(u + 1) * d];
            let mut ei = mean[(m + i) * d..(m + i + 1) * d].to_vec();
            if model.kind() == BackboneKind::ModalityKnn {
                let graph = model.item_graph().unwrap();
                for k in 0..features.len() {
                    let mut smoothed = vec![0.0; features[k].dim()];
                    for j in 0..n {
                        let w = graph.get(i, j);
                        for (s, v) in smoothed.iter_mut().zip(raw(k, j)) {
                            *s += w * v;
                        }
                    }
                    for (e, h) in ei.iter_mut().zip(proj(k, &smoothed)) {
                        *e += h;
                    }
                }
            }
            dot(eu, &ei)
        }
        BackboneKind::Vbpr => {
            let mut s = dot(&p.user[u * d..(u + 1) * d], &p.item[i * d..(i + 1) * d]);
            for k in 0..features.len() {
                s += dot(&p.pref[k][u * d..(u + 1) * d], &proj(k, &raw(k, i)));
            }
            s
        }
    }
}

#[test]
fn scores_match_dense_oracle() {
    for kind in [BackboneKind::Lightgcn, BackboneKind::Vbpr, BackboneKind::ModalityKnn] {
        for seed in 0..3 {
            let (model, train, features) = random_model(kind, seed);
            for u in 0..model.num_users() {
                let scores = model.score(u, None).unwrap();
                for (i, s) in scores.iter().enumerate() {
                    let want = oracle_score(&model, &train, &features, u, i);
                    assert!((s - want).abs() < 1e-10, "{kind} u{u} i{i}: {s} vs {want}");
                }
            }
        }
    }
}

#[test]
fn vbpr_without_preferences_is_mf() {
    let (mut model, train, _) = random_model(BackboneKind::Vbpr, 2);
    for pref in &mut model.params.pref {
        pref.iter_mut().for_each(|v| *v = 0.0);
    }
    model.propagate(&build_norm_adjacency(&train)).unwrap();
    let d = model.dim();
    for u in 0..model.num_users() {
        let scores = model.score(u, None).unwrap();
        for (i, s) in scores.iter().enumerate() {
            let mf: f64 = (0..d).map(|k| model.params.user[u * d + k] * model.params.item[i * d + k]).sum();
            assert!((s - mf).abs() <= 1e-15 * mf.abs().max(1.0), "{s} vs {mf}");
        }
    }
}

#[test]
fn zero_embeddings_score_zero() {
    let (mut model, train, _) = random_model(BackboneKind::Lightgcn, 1);
    model.params.user.iter_mut().for_each(|v| *v = 0.0);
    model.params.item.iter_mut().for_each(|v| *v = 0.0);
    model.propagate(&build_norm_adjacency(&train)).unwrap();
    assert!(model.score(0, None).unwrap().iter().all(|s| *s == 0.0));
}

#[test]
fn unpropagated_model_cannot_score() {
    let model = init_embeddings(3, 3, 4, 1).unwrap();
    assert!(model.score(0, None).is_err());
}

#[test]
fn constant_shift_preserves_ranking() {
    let (model, _, _) = random_model(BackboneKind::ModalityKnn, 5);
    let scores = model.score(2, None).unwrap();
    let shifted: Vec<f64> = scores.iter().map(|s| s + 3.0).collect();
    assert_eq!(rank_items(&scores, &[]), rank_items(&shifted, &[]));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [BackboneKind::Lightgcn, BackboneKind::Vbpr, BackboneKind::ModalityKnn] {
        let (model, train, features) = random_model(kind, 7);
        let path = dir.path().join(format!("{kind}.ckpt"));
        save_checkpoint(&model, &path).unwrap();
        let header = std::fs::read(&path).unwrap();
        let first = String::from_utf8_lossy(&header[..header.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        assert_eq!(first, format!("TRM1 {kind} 6 8 4 2"));

        let mut back = load_checkpoint(&path, &features, 3).unwrap();
        assert_eq!(back.kind(), kind);
        back.propagate(&build_norm_adjacency(&train)).unwrap();
        // Parameters are stored as 32-bit floats.
        for (a, b) in model.params.tables().iter().zip(back.params.tables()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*y, f64::from(*x as f32));
            }
        }
        // Saving the reloaded model reproduces the file exactly.
        let again = dir.path().join("again.ckpt");
        save_checkpoint(&back, &again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), header);
    }
}

fn default_synth() -> trustrec::corpus::SynthData {
    synth_generate(&SynthSpec::default(), 1).unwrap()
}

#[test]
fn training_beats_popularity_on_synthetic_data() {
    let data = default_synth();
    let split = &data.split;
    let model = EmbeddingModel::new(
        BackboneKind::Lightgcn,
        split.num_users(),
        split.num_items(),
        ModelShape::default(),
        &[],
        1,
    )
    .unwrap();
    let config = TrainConfig {
        lr: 0.01,
        max_epochs: 40,
        seed: 1,
        ..TrainConfig::default()
    };
    let (trained, history) = train(model, split, &config, None).unwrap();
    let first = history.records.first().unwrap().loss;
    let last = history.records.last().unwrap().loss;
    assert!(last < first, "loss {first} -> {last}");
    let ours = validation_recall(&trained.scoring_view().unwrap(), split, 10);
    let popularity = validation_recall(&PopularityScorer::new(&split.train), split, 10);
    assert!(ours > popularity, "recall {ours} vs popularity {popularity}");
    assert_eq!(ours, history.best_val_recall);
}

#[test]
fn explicit_propagation_equal_to_train_is_bit_identical() {
    let data = default_synth();
    let split = &data.split;
    let config = TrainConfig {
        lr: 0.01,
        max_epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    for kind in [BackboneKind::Lightgcn, BackboneKind::ModalityKnn] {
        let shape = ModelShape {
            dim: 16,
            ..ModelShape::default()
        };
        let fresh = || {
            EmbeddingModel::new(kind, split.num_users(), split.num_items(), shape, &data.features, 4).unwrap()
        };
        let (a, ha) = train(fresh(), split, &config, None).unwrap();
        let (b, hb) = train(fresh(), split, &config, Some(&split.train)).unwrap();
        assert_eq!(a.params, b.params, "{kind}");
        assert_eq!(ha, hb);
    }
}

#[test]
fn propagation_edges_change_the_model() {
    let data = default_synth();
    let split = &data.split;
    let config = TrainConfig {
        lr: 0.01,
        max_epochs: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let fresh = || init_embeddings(split.num_users(), split.num_items(), 16, 4).unwrap();
    let fewer = InteractionSet::new(
        split.num_users(),
        split.num_items(),
        split.train.edges().iter().copied().step_by(2),
    )
    .unwrap();
    let (a, _) = train(fresh(), split, &config, None).unwrap();
    let (b, _) = train(fresh(), split, &config, Some(&fewer)).unwrap();
    assert_ne!(a.params, b.params);
}
