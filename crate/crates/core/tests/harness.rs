use std::path::PathBuf;

use trustrec::backbone::BackboneKind;
use trustrec::harness::{
    cell_config, find_bundles, report, run_experiment, sweep, DataSource, ExperimentConfig, SweepAxis, Variant,
};

/// A synthetic VBPR experiment small enough to train in well under a second.
fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.synth.num_users = 60;
    cfg.data.synth.num_items = 80;
    cfg.data.synth.latent_dim = 4;
    cfg.data.synth.edges_per_user = 20;
    cfg.data.synth.modality_dims = vec![("v".into(), 6), ("t".into(), 4)];
    cfg.backbone = BackboneKind::Vbpr;
    cfg.shape.dim = 8;
    cfg.train.lr = 0.01;
    cfg.train.max_epochs = 4;
    cfg.train.patience = 2;
    cfg.train.batch_size = 128;
    cfg.mr.projection_epochs = 5;
    cfg.eta_m = 0.2;
    cfg.seed = 5;
    cfg
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = tiny();
    cfg.mr.enabled = true;
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.metrics.users, 60);
    assert!(a.metrics.recall[0] > 0.0);
    assert_eq!(a.metrics_json(), b.metrics_json());
    assert_eq!(a.provenance_json(), b.provenance_json());

    cfg.seed = 6;
    let c = run_experiment(&cfg).unwrap();
    assert_ne!(a.metrics_json(), c.metrics_json());
}

#[test]
fn sweep_matches_independent_runs() {
    let cfg = tiny();
    let values = [0.0, 0.3];
    let seeds = [1, 2];
    let table = sweep(&cfg, SweepAxis::EtaM, &values, &seeds).unwrap();
    assert_eq!(table.cells.len(), values.len() * seeds.len() * 2);
    for &value in &values {
        for &seed in &seeds {
            for variant in SweepAxis::EtaM.variants() {
                let fresh = run_experiment(&cell_config(&cfg, SweepAxis::EtaM, value, seed, variant)).unwrap();
                let cell = table.cell(&variant.name(), value, seed).unwrap();
                assert_eq!(cell.metrics, fresh.metrics.metric_map(), "{} {value} {seed}", variant.name());
            }
        }
    }
}

#[test]
fn full_mix_weight_reproduces_base() {
    let table = sweep(&tiny(), SweepAxis::Lambda, &[1.0], &[3]).unwrap();
    let base = table.cell("base", 1.0, 3).unwrap();
    let rect = table.cell("rect", 1.0, 3).unwrap();
    assert_eq!(base.metrics, rect.metrics);
}

#[test]
fn edge_sweep_shape_and_report_rows() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.backbone = BackboneKind::Lightgcn;
    cfg.data.synth.modality_dims.clear();
    cfg.eta_m = 0.0;
    cfg.shape.layers = 1;
    cfg.output_dir = Some(out.path().to_path_buf());
    let values = [-0.1, 0.0, 0.1];
    let table = sweep(&cfg, SweepAxis::EtaE, &values, &[1]).unwrap();
    assert_eq!(table.cells.len(), 21);
    assert_eq!(table.summary().len(), 21);
    let per_variant: Vec<String> = table.cells[..7].iter().map(|c| c.variant.clone()).collect();
    assert_eq!(
        per_variant,
        ["base", "add_train", "add_graph", "add_both", "prune_train", "prune_graph", "prune_both"]
    );
    let summary = table.summary_csv();
    assert_eq!(summary.lines().count(), 22);

    let bundles = find_bundles(out.path()).unwrap();
    assert_eq!(bundles.len(), 21);
    let rows = report(&bundles).unwrap().rows;
    assert_eq!(rows.len(), 21 * table.metric_names.len());
    assert!(rows.iter().all(|r| r.axis == "eta_e"));
    let base_row = rows
        .iter()
        .find(|r| r.variant == "base" && r.value == "-0.1" && r.metric == "recall@10")
        .unwrap();
    assert_eq!(Some(&base_row.score), table.cell("base", -0.1, 1).unwrap().metrics.get("recall@10"));

    // A broken bundle is named in the error.
    let victim = &bundles[4];
    std::fs::write(victim.join("metrics.json"), "{\"ks\": [10]}").unwrap();
    let err = report(&bundles).unwrap_err().to_string();
    assert!(err.contains(&victim.display().to_string()), "{err}");
}

#[test]
fn rectification_axes_need_features() {
    let mut cfg = tiny();
    cfg.backbone = BackboneKind::Lightgcn;
    let err = sweep(&cfg, SweepAxis::Lambda, &[0.5], &[1]).unwrap_err();
    assert!(err.is_config());
    assert!(sweep(&tiny(), SweepAxis::EtaM, &[], &[1]).unwrap_err().is_config());
}

#[test]
fn variants_round_trip_through_configs() {
    for axis in [SweepAxis::EtaE, SweepAxis::Lambda] {
        for variant in axis.variants() {
            let cfg = cell_config(&tiny(), axis, 0.1, 1, variant);
            assert_eq!(Variant::of(&cfg), variant.name());
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back.to_json_string(), cfg.to_json_string());
        }
    }
}

#[test]
fn smoke_on_the_mini_fixture() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.source = DataSource::Files;
    cfg.data.interactions = Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini.tsv"));
    cfg.shape.dim = 8;
    cfg.train.max_epochs = 3;
    cfg.train.lr = 0.01;
    cfg.edit.op = Some(trustrec::edge_editor::EditOp::Prune);
    cfg.edit.r = 0.05;
    let bundle = run_experiment(&cfg).unwrap();
    bundle.write(out.path()).unwrap();
    for name in ["metrics.json", "provenance.json", "config.json", "history.csv", "plan.tsv"] {
        assert!(out.path().join(name).is_file(), "{name}");
    }
    // Users with at least ten cored edges hold out one test item.
    let reference = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini_5core.tsv")).unwrap();
    let mut degree = std::collections::BTreeMap::new();
    for line in reference.lines() {
        *degree.entry(line.split('\t').next().unwrap()).or_insert(0usize) += 1;
    }
    assert_eq!(bundle.metrics.users, degree.values().filter(|&&d| d >= 10).count());
    assert!(bundle.metrics.recall.iter().all(|r| (0.0..=1.0).contains(r)));
    let plan = bundle.plan.unwrap();
    assert!(!plan.removals.is_empty());
    let rows = report(&[out.path().to_path_buf()]).unwrap().rows;
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.variant == "prune_both"));
}
