use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::rc::Rc;

use serde_json::{json, Value};

use super::config::{DataSource, EditConfig, ExperimentConfig, MrConfig};
use crate::backbone::{train, BackboneKind, EmbeddingModel, ModelShape, TrainHistory};
use crate::corpus::{
    ingest_interactions, load_features, split_dataset, synth_generate, FeatureTable, SplitDataset, SplitRatios, SynthTruth,
};
use crate::corruptor::{corrupt_edges, permute_modality, PermRecord};
use crate::edge_editor::{apply_edit, complete_edges, prune_edges, EditOp, EditPlan, EditProvenance};
use crate::error::{Error, Result, StageExt};
use crate::evaluator::{evaluate, MetricsReport};
use crate::rectifier::{anchors_from_model, rectify_with_anchors};
use crate::util::cosine;

/// Dataset after corruption, shared by every run with the same data,
/// corruption and seed settings.
#[derive(Debug)]
pub struct Prepared {
    /// Split whose training set is the (possibly noisy) observed edge set.
    pub observed: SplitDataset,
    /// Feature tables after misalignment.
    pub features: Vec<FeatureTable>,
    pub perm_records: Vec<PermRecord>,
    pub edges_added: usize,
    pub edges_removed: usize,
    pub truth: Option<SynthTruth>,
}

/// LightGCN trained on the observed edges: anchor source, edit prior, and
/// the LightGCN backbone itself when no edit applies.
#[derive(Debug)]
pub struct Encoder {
    pub model: EmbeddingModel,
    pub history: TrainHistory,
}

/// Everything a run produces besides its config.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub metrics: MetricsReport,
    pub provenance: Value,
    pub history: TrainHistory,
    pub plan: Option<EditPlan>,
}

/// Result of one experiment: the resolved config plus its outputs.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
    pub provenance: Value,
    pub history: TrainHistory,
    pub plan: Option<EditPlan>,
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON value serializes");
    s.push('\n');
    s
}

impl Bundle {
    pub fn metrics_json(&self) -> String {
        pretty(&self.metrics.to_json())
    }

    pub fn provenance_json(&self) -> String {
        pretty(&self.provenance)
    }

    /// Writes `metrics.json`, `provenance.json`, `config.json`,
    /// `history.csv` and, for edited runs, `plan.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: &str| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        put("metrics.json", &self.metrics_json())?;
        put("provenance.json", &self.provenance_json())?;
        put("config.json", &self.config.to_json_string())?;
        put("history.csv", &self.history.to_csv(self.config.train.eval_k))?;
        if let Some(plan) = &self.plan {
            put("plan.tsv", &plan.to_tsv())?;
        }
        Ok(())
    }
}

fn key_of(cfg: &ExperimentConfig, keep: impl Fn(&str) -> bool) -> String {
    let parts: Vec<String> = cfg
        .entries()
        .into_iter()
        .filter(|(k, _)| keep(k))
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    parts.join(";")
}

fn data_key(cfg: &ExperimentConfig) -> String {
    key_of(cfg, |k| k.starts_with("data.") || k.starts_with("corrupt.") || k == "seed")
}

fn encoder_key(cfg: &ExperimentConfig) -> String {
    format!(
        "{}|{}",
        data_key(cfg),
        key_of(cfg, |k| k.starts_with("train.") || k == "backbone.dim" || k == "anchor.layers")
    )
}

/// Config with every setting that cannot affect the outcome reset, so runs
/// that differ only in inert settings share one result.
fn effective(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut eff = cfg.clone();
    if !eff.mr.enabled {
        eff.mr = MrConfig::default();
    }
    if eff.edit.op.is_none() {
        eff.edit = EditConfig::default();
    }
    if eff.backbone != BackboneKind::ModalityKnn {
        eff.shape.knn_k = ModelShape::default().knn_k;
    }
    eff.seeds.clear();
    eff.output_dir = None;
    eff
}

/// Executes experiments, reusing prepared data, encoders and finished
/// outcomes across calls. Every cached path computes exactly what a fresh
/// run would.
#[derive(Default)]
pub struct Runner {
    prepared: HashMap<String, Rc<Prepared>>,
    encoders: HashMap<String, Rc<Encoder>>,
    outcomes: HashMap<String, Outcome>,
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run(&mut self, cfg: &ExperimentConfig) -> Result<Bundle> {
        cfg.validate()?;
        let key = key_of(&effective(cfg), |_| true);
        let outcome = match self.outcomes.get(&key) {
            Some(done) => done.clone(),
            None => {
                let fresh = self.execute(cfg)?;
                self.outcomes.insert(key, fresh.clone());
                fresh
            }
        };
        let bundle = Bundle {
            config: cfg.clone(),
            metrics: outcome.metrics,
            provenance: outcome.provenance,
            history: outcome.history,
            plan: outcome.plan,
        };
        if let Some(dir) = &cfg.output_dir {
            bundle.write(dir).stage("write-bundle")?;
        }
        Ok(bundle)
    }

    pub fn prepare(&mut self, cfg: &ExperimentConfig) -> Result<Rc<Prepared>> {
        let key = data_key(cfg);
        if let Some(p) = self.prepared.get(&key) {
            return Ok(p.clone());
        }
        let p = Rc::new(prepare(cfg)?);
        self.prepared.insert(key, p.clone());
        Ok(p)
    }

    pub fn encoder(&mut self, cfg: &ExperimentConfig) -> Result<Rc<Encoder>> {
        let key = encoder_key(cfg);
        if let Some(e) = self.encoders.get(&key) {
            return Ok(e.clone());
        }
        let prepared = self.prepare(cfg)?;
        let observed = &prepared.observed;
        let shape = ModelShape {
            dim: cfg.shape.dim,
            layers: cfg.anchor_layers,
            knn_k: ModelShape::default().knn_k,
        };
        let model = EmbeddingModel::new(
            BackboneKind::Lightgcn,
            observed.num_users(),
            observed.num_items(),
            shape,
            &[],
            cfg.seed,
        )
        .stage("encoder")?;
        let (model, history) = train(model, observed, &cfg.train_config(), None).stage("encoder")?;
        let e = Rc::new(Encoder { model, history });
        self.encoders.insert(key, e.clone());
        Ok(e)
    }

    fn execute(&mut self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let prepared = self.prepare(cfg)?;
        let observed = &prepared.observed;
        let seed = cfg.seed;
        let mut prov = BTreeMap::<String, Value>::new();
        prov.insert("seed".into(), seed.into());
        prov.insert(
            "data".into(),
            json!({
                "source": cfg.data.source.name(),
                "num_users": observed.num_users(),
                "num_items": observed.num_items(),
                "train_edges": observed.train.len(),
                "val_edges": observed.val.len(),
                "test_edges": observed.test.len(),
            }),
        );
        let moved: BTreeMap<String, usize> = prepared
            .perm_records
            .iter()
            .map(|r| (r.modality.clone(), r.moved_rows().len()))
            .collect();
        let etas: BTreeMap<String, f64> = prepared
            .features
            .iter()
            .map(|f| (f.modality().to_string(), cfg.eta_m_for(f.modality())))
            .collect();
        prov.insert(
            "corruption".into(),
            json!({
                "eta_m": etas,
                "moved_rows": moved,
                "eta_e": cfg.eta_e,
                "edges_added": prepared.edges_added,
                "edges_removed": prepared.edges_removed,
            }),
        );

        let needs_encoder = cfg.mr.enabled || cfg.edit.op.is_some() || self.backbone_is_encoder(cfg);
        let encoder = if needs_encoder { Some(self.encoder(cfg)?) } else { None };
        prov.insert(
            "encoder".into(),
            encoder.as_ref().map_or(Value::Null, |e| history_json(&e.history)),
        );

        let features = if cfg.mr.enabled {
            let enc = encoder.as_ref().expect("encoder trained for rectification");
            let anchors = anchors_from_model(&enc.model).stage("anchors")?;
            let rc = cfg.mr.rectify_config(seed)?;
            let eta_list: Vec<(String, f64)> = etas.clone().into_iter().collect();
            let rectified = rectify_with_anchors(&anchors, &prepared.features, &eta_list, &rc).stage("rectify")?;
            let mut rp = serde_json::to_value(&rectified.provenance).expect("provenance serializes");
            if let Some(truth) = &prepared.truth {
                rp["recovery"] = json!(recovery(&prepared, truth, &rectified.features));
            }
            prov.insert("rectifier".into(), rp);
            rectified.features
        } else {
            prov.insert("rectifier".into(), Value::Null);
            prepared.features.clone()
        };

        let (supervision, propagation, plan) = match cfg.edit.op {
            None => (observed.train.clone(), observed.train.clone(), None),
            Some(op) => {
                let enc = encoder.as_ref().expect("encoder trained for editing");
                let provenance = EditProvenance {
                    prior: format!("lightgcn-encoder/seed={seed}"),
                    k_user: cfg.edit.k_user,
                    k_item: cfg.edit.k_item,
                };
                let plan = match op {
                    EditOp::Prune => prune_edges(&observed.train, &enc.model, cfg.edit.r, provenance),
                    EditOp::Complete => complete_edges(
                        &observed.train,
                        &enc.model,
                        cfg.edit.r,
                        cfg.edit.k_user,
                        cfg.edit.k_item,
                        &observed.holdout(),
                        provenance,
                    ),
                }
                .stage("edit")?
                .with_target(cfg.edit.target);
                let (sup, prop) = apply_edit(observed, &plan).stage("edit")?;
                (sup, prop, Some(plan))
            }
        };
        prov.insert(
            "edit".into(),
            plan.as_ref().map_or(Value::Null, |p| {
                json!({
                    "op": p.op.name(),
                    "target": p.target.name(),
                    "r": p.r,
                    "k_user": p.provenance.k_user,
                    "k_item": p.provenance.k_item,
                    "prior": p.provenance.prior,
                    "removals": p.removals.len(),
                    "additions": p.additions.len(),
                })
            }),
        );

        let mut training_split = observed.clone();
        training_split.train = supervision;
        let (model, history) = if self.backbone_is_encoder(cfg) && cfg.edit.op.is_none() {
            let enc = encoder.as_ref().expect("encoder trained");
            (enc.model.clone(), enc.history.clone())
        } else {
            let model = EmbeddingModel::new(
                cfg.backbone,
                observed.num_users(),
                observed.num_items(),
                cfg.shape,
                &features,
                seed,
            )
            .stage("train")?;
            train(model, &training_split, &cfg.train_config(), Some(&propagation)).stage("train")?
        };
        let mut th = history_json(&history);
        th["backbone"] = cfg.backbone.name().into();
        th["supervision_edges"] = training_split.train.len().into();
        th["propagation_edges"] = propagation.len().into();
        prov.insert("training".into(), th);

        let view = model.scoring_view().stage("evaluate")?;
        let metrics = evaluate(&view, &training_split, &cfg.ks, cfg.policy);
        Ok(Outcome {
            metrics,
            provenance: Value::Object(prov.into_iter().collect()),
            history,
            plan,
        })
    }

    /// True when the backbone is exactly the encoder model (LightGCN with the
    /// encoder's depth), so its training can be shared.
    fn backbone_is_encoder(&self, cfg: &ExperimentConfig) -> bool {
        cfg.backbone == BackboneKind::Lightgcn && cfg.shape.layers == cfg.anchor_layers
    }
}

fn history_json(h: &TrainHistory) -> Value {
    json!({
        "epochs": h.records.len(),
        "best_epoch": h.best_epoch,
        "best_val_recall": h.best_val_recall,
        "stopped_early": h.stopped_early,
    })
}

/// Share of misaligned rows whose output is cosine-closer to the clean row
/// than the corrupted input was.
fn recovery(prepared: &Prepared, truth: &SynthTruth, rectified: &[FeatureTable]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for rec in &prepared.perm_records {
        let moved = rec.moved_rows();
        let (Some(clean), Some(k)) = (
            truth.clean(&rec.modality),
            prepared.features.iter().position(|f| f.modality() == rec.modality),
        ) else {
            continue;
        };
        if moved.is_empty() {
            continue;
        }
        let better = moved
            .iter()
            .filter(|&&i| {
                let target = clean.row_f64(i);
                cosine(&rectified[k].row_f64(i), &target) > cosine(&prepared.features[k].row_f64(i), &target)
            })
            .count();
        out.insert(rec.modality.clone(), better as f64 / moved.len() as f64);
    }
    out
}

/// Loads or generates the data and applies the configured corruption.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let seed = cfg.seed;
    let (split, clean_features, truth) = match cfg.data.source {
        DataSource::Synth => {
            let data = synth_generate(&cfg.data.synth, seed).stage("data")?;
            (data.split, data.features, Some(data.truth))
        }
        DataSource::Files => {
            let path = cfg.data.interactions.as_ref().expect("validated");
            let ingested = ingest_interactions(path, cfg.data.min_core).stage("ingest")?;
            let split = split_dataset(&ingested.interactions, SplitRatios::default(), seed).stage("split")?;
            let features = load_feature_files(cfg, split.num_items())?;
            (split, features, None)
        }
        DataSource::SplitDir => {
            let dir = cfg.data.split_dir.as_ref().expect("validated");
            let split = SplitDataset::read_dir(dir).stage("data")?;
            let features = load_feature_files(cfg, split.num_items())?;
            (split, features, None)
        }
    };

    let mut features = Vec::with_capacity(clean_features.len());
    let mut perm_records = Vec::new();
    let mut truth = truth;
    for table in &clean_features {
        let (corrupted, record) = permute_modality(table, cfg.eta_m_for(table.modality()), seed).stage("corrupt")?;
        if let Some(t) = truth.as_mut() {
            t.record_permutation(&record);
        }
        features.push(corrupted);
        perm_records.push(record);
    }

    let (observed, added, removed) = if cfg.eta_e == 0.0 {
        (split, 0, 0)
    } else {
        let noise = corrupt_edges(&split.train, cfg.eta_e, seed).stage("corrupt")?;
        let (added, removed) = (noise.added.len(), noise.removed.len());
        (split.with_observed_train(noise.edges).stage("corrupt")?, added, removed)
    };
    Ok(Prepared {
        observed,
        features,
        perm_records,
        edges_added: added,
        edges_removed: removed,
        truth,
    })
}

fn load_feature_files(cfg: &ExperimentConfig, num_items: usize) -> Result<Vec<FeatureTable>> {
    cfg.data
        .features
        .iter()
        .map(|(tag, path)| load_features(path, tag, Some(num_items)).stage("features"))
        .collect()
}

/// One experiment from scratch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Bundle> {
    Runner::new().run(cfg)
}
