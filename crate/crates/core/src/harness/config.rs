use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::backbone::{BackboneKind, ModelShape, TrainConfig};
use crate::corpus::SynthSpec;
use crate::edge_editor::{EditOp, EditTarget, DEFAULT_K_ITEM, DEFAULT_K_USER, DEFAULT_RATIO};
use crate::error::{Error, Result};
use crate::evaluator::FilterPolicy;
use crate::rectifier::{ProjectionConfig, RectifyConfig, RhoRule, SinkhornConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Planted-correspondence benchmark generated from the run seed.
    Synth,
    /// Raw interaction file, cored and split with the run seed.
    Files,
    /// A split directory written by `SplitDataset::write_dir`.
    SplitDir,
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Synth => "synth",
            Self::Files => "files",
            Self::SplitDir => "split_dir",
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth" => Ok(Self::Synth),
            "files" => Ok(Self::Files),
            "split_dir" => Ok(Self::SplitDir),
            other => Err(Error::config(format!("unknown data.source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub synth: SynthSpec,
    pub interactions: Option<PathBuf>,
    pub min_core: usize,
    pub split_dir: Option<PathBuf>,
    /// Feature files by modality tag (row `i` = dense item index `i`).
    pub features: BTreeMap<String, PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            synth: SynthSpec::default(),
            interactions: None,
            min_core: 5,
            split_dir: None,
            features: BTreeMap::new(),
        }
    }
}

/// Rectification settings in config form; the keep-ratio value is kept even
/// when the rule ignores it so configs round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct MrConfig {
    pub enabled: bool,
    pub rho_rule: String,
    pub rho: f64,
    pub topk: usize,
    pub tau: f64,
    pub lambda: f64,
    pub sinkhorn: SinkhornConfig,
    pub use_sinkhorn: bool,
    pub small_loss: bool,
    pub projection_epochs: usize,
    pub projection_batch_size: usize,
    pub projection_lr: f64,
}

impl Default for MrConfig {
    fn default() -> Self {
        let r = RectifyConfig::default();
        let p = ProjectionConfig::default();
        Self {
            enabled: false,
            rho_rule: r.rho.name().to_string(),
            rho: 1.0,
            topk: r.topk,
            tau: r.tau,
            lambda: r.lambda,
            sinkhorn: r.sinkhorn,
            use_sinkhorn: r.use_sinkhorn,
            small_loss: r.small_loss,
            projection_epochs: p.epochs,
            projection_batch_size: p.batch_size,
            projection_lr: p.lr,
        }
    }
}

impl MrConfig {
    pub fn rho_rule(&self) -> Result<RhoRule> {
        match self.rho_rule.as_str() {
            "clean_fraction" => Ok(RhoRule::CleanFraction),
            "literal" => Ok(RhoRule::Literal),
            "fixed" => Ok(RhoRule::Fixed { rho: self.rho }),
            other => Err(Error::config(format!(
                "unknown mr.rho_rule `{other}` (expected clean_fraction, literal or fixed)"
            ))),
        }
    }

    pub fn rectify_config(&self, seed: u64) -> Result<RectifyConfig> {
        let cfg = RectifyConfig {
            rho: self.rho_rule()?,
            topk: self.topk,
            tau: self.tau,
            lambda: self.lambda,
            sinkhorn: self.sinkhorn,
            use_sinkhorn: self.use_sinkhorn,
            small_loss: self.small_loss,
            projection: ProjectionConfig {
                epochs: self.projection_epochs,
                batch_size: self.projection_batch_size,
                lr: self.projection_lr,
                seed,
            },
        };
        cfg.validate().map_err(|e| Error::config(format!("mr: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig {
    /// `None` disables editing.
    pub op: Option<EditOp>,
    pub r: f64,
    pub target: EditTarget,
    pub k_user: usize,
    pub k_item: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            op: None,
            r: DEFAULT_RATIO,
            target: EditTarget::Both,
            k_user: DEFAULT_K_USER,
            k_item: DEFAULT_K_ITEM,
        }
    }
}

/// Everything that determines one experiment. Serialized as a single JSON
/// object with flat dotted keys; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub backbone: BackboneKind,
    pub shape: ModelShape,
    /// Propagation depth of the anchor / prior encoder.
    pub anchor_layers: usize,
    /// Shared by the backbone and the encoder; its seed is replaced by the
    /// run seed.
    pub train: TrainConfig,
    /// Misalignment applied to every modality unless overridden.
    pub eta_m: f64,
    pub eta_m_overrides: BTreeMap<String, f64>,
    pub eta_e: f64,
    pub mr: MrConfig,
    pub edit: EditConfig,
    pub ks: Vec<usize>,
    pub policy: FilterPolicy,
    pub seed: u64,
    /// Seeds used by sweeps.
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            backbone: BackboneKind::Lightgcn,
            shape: ModelShape::default(),
            anchor_layers: 2,
            train: TrainConfig::default(),
            eta_m: 0.0,
            eta_m_overrides: BTreeMap::new(),
            eta_e: 0.0,
            mr: MrConfig::default(),
            edit: EditConfig::default(),
            ks: vec![10, 20],
            policy: FilterPolicy::OriginalPositives,
            seed: 1,
            seeds: vec![1, 2, 3],
            output_dir: None,
        }
    }
}

fn modalities_to_string(dims: &[(String, usize)]) -> String {
    dims.iter().map(|(t, d)| format!("{t}:{d}")).collect::<Vec<_>>().join(",")
}

fn parse_modalities(s: &str) -> Result<Vec<(String, usize)>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let (tag, dim) = part
                .split_once(':')
                .ok_or_else(|| Error::config(format!("data.synth.modalities entry `{part}` is not tag:dim")))?;
            let dim = dim
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("data.synth.modalities: bad dimension in `{part}`")))?;
            Ok((tag.trim().to_string(), dim))
        })
        .collect()
}

fn bad(key: &str, expected: &str, value: &Value) -> Error {
    Error::config(format!("`{key}` expects {expected}, got {value}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(key, "a number", v))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| bad(key, "a nonnegative integer", v))
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| bad(key, "a nonnegative integer", v))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

fn as_path(key: &str, v: &Value) -> Result<Option<PathBuf>> {
    if v.is_null() {
        return Ok(None);
    }
    Ok(Some(PathBuf::from(as_str(key, v)?)))
}

fn path_value(p: &Option<PathBuf>) -> Value {
    p.as_ref().map_or(Value::Null, |p| Value::from(p.to_string_lossy().into_owned()))
}

fn parse_named<T: FromStr<Err = Error>>(key: &str, v: &Value) -> Result<T> {
    as_str(key, v)?
        .parse()
        .map_err(|e: Error| Error::config(format!("`{key}`: {e}")))
}

impl ExperimentConfig {
    /// Flat `(key, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, Value)> {
        let d = &self.data;
        let mut out: Vec<(String, Value)> = vec![
            ("data.source".into(), d.source.name().into()),
            ("data.synth.num_users".into(), d.synth.num_users.into()),
            ("data.synth.num_items".into(), d.synth.num_items.into()),
            ("data.synth.latent_dim".into(), d.synth.latent_dim.into()),
            ("data.synth.edges_per_user".into(), d.synth.edges_per_user.into()),
            ("data.synth.feature_noise_std".into(), d.synth.feature_noise_std.into()),
            ("data.synth.modalities".into(), modalities_to_string(&d.synth.modality_dims).into()),
            ("data.interactions".into(), path_value(&d.interactions)),
            ("data.min_core".into(), d.min_core.into()),
            ("data.split_dir".into(), path_value(&d.split_dir)),
        ];
        for (tag, path) in &d.features {
            out.push((format!("data.features.{tag}"), path.to_string_lossy().into_owned().into()));
        }
        out.extend([
            ("backbone.kind".into(), self.backbone.name().into()),
            ("backbone.dim".into(), self.shape.dim.into()),
            ("backbone.layers".into(), self.shape.layers.into()),
            ("backbone.knn_k".into(), self.shape.knn_k.into()),
            ("anchor.layers".into(), self.anchor_layers.into()),
            ("train.lr".into(), self.train.lr.into()),
            ("train.l2".into(), self.train.l2.into()),
            ("train.batch_size".into(), self.train.batch_size.into()),
            ("train.eval_batch_size".into(), self.train.eval_batch_size.into()),
            ("train.max_epochs".into(), self.train.max_epochs.into()),
            ("train.patience".into(), self.train.patience.into()),
            ("train.eval_k".into(), self.train.eval_k.into()),
            ("corrupt.eta_m".into(), self.eta_m.into()),
        ]);
        for (tag, eta) in &self.eta_m_overrides {
            out.push((format!("corrupt.eta_m.{tag}"), (*eta).into()));
        }
        let mr = &self.mr;
        let e = &self.edit;
        out.extend([
            ("corrupt.eta_e".into(), self.eta_e.into()),
            ("mr.enabled".into(), mr.enabled.into()),
            ("mr.rho_rule".into(), mr.rho_rule.clone().into()),
            ("mr.rho".into(), mr.rho.into()),
            ("mr.topk".into(), mr.topk.into()),
            ("mr.tau".into(), mr.tau.into()),
            ("mr.lambda".into(), mr.lambda.into()),
            ("mr.sinkhorn".into(), mr.use_sinkhorn.into()),
            ("mr.small_loss".into(), mr.small_loss.into()),
            ("mr.sinkhorn_eps".into(), mr.sinkhorn.eps.into()),
            ("mr.sinkhorn_iters".into(), mr.sinkhorn.max_iter.into()),
            ("mr.sinkhorn_tol".into(), mr.sinkhorn.tol.into()),
            ("mr.projection_epochs".into(), mr.projection_epochs.into()),
            ("mr.projection_batch_size".into(), mr.projection_batch_size.into()),
            ("mr.projection_lr".into(), mr.projection_lr.into()),
            ("edit.op".into(), e.op.map_or("none", EditOp::name).into()),
            ("edit.r".into(), e.r.into()),
            ("edit.target".into(), e.target.name().into()),
            ("edit.k_user".into(), e.k_user.into()),
            ("edit.k_item".into(), e.k_item.into()),
            ("eval.ks".into(), Value::from(self.ks.clone())),
            ("eval.policy".into(), self.policy.name().into()),
            ("seed".into(), self.seed.into()),
            ("seeds".into(), Value::from(self.seeds.clone())),
            ("output.dir".into(), path_value(&self.output_dir)),
        ]);
        out
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        if let Some(tag) = key.strip_prefix("data.features.") {
            let path = as_path(key, v)?;
            match path {
                Some(p) => self.data.features.insert(tag.to_string(), p),
                None => self.data.features.remove(tag),
            };
            return Ok(());
        }
        if let Some(tag) = key.strip_prefix("corrupt.eta_m.") {
            if v.is_null() {
                self.eta_m_overrides.remove(tag);
            } else {
                self.eta_m_overrides.insert(tag.to_string(), as_f64(key, v)?);
            }
            return Ok(());
        }
        match key {
            "data.source" => self.data.source = parse_named(key, v)?,
            "data.synth.num_users" => self.data.synth.num_users = as_usize(key, v)?,
            "data.synth.num_items" => self.data.synth.num_items = as_usize(key, v)?,
            "data.synth.latent_dim" => self.data.synth.latent_dim = as_usize(key, v)?,
            "data.synth.edges_per_user" => self.data.synth.edges_per_user = as_usize(key, v)?,
            "data.synth.feature_noise_std" => self.data.synth.feature_noise_std = as_f64(key, v)?,
            "data.synth.modalities" => self.data.synth.modality_dims = parse_modalities(as_str(key, v)?)?,
            "data.interactions" => self.data.interactions = as_path(key, v)?,
            "data.min_core" => self.data.min_core = as_usize(key, v)?,
            "data.split_dir" => self.data.split_dir = as_path(key, v)?,
            "backbone.kind" => self.backbone = parse_named(key, v)?,
            "backbone.dim" => self.shape.dim = as_usize(key, v)?,
            "backbone.layers" => self.shape.layers = as_usize(key, v)?,
            "backbone.knn_k" => self.shape.knn_k = as_usize(key, v)?,
            "anchor.layers" => self.anchor_layers = as_usize(key, v)?,
            "train.lr" => self.train.lr = as_f64(key, v)?,
            "train.l2" => self.train.l2 = as_f64(key, v)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, v)?,
            "train.eval_batch_size" => self.train.eval_batch_size = as_usize(key, v)?,
            "train.max_epochs" => self.train.max_epochs = as_usize(key, v)?,
            "train.patience" => self.train.patience = as_usize(key, v)?,
            "train.eval_k" => self.train.eval_k = as_usize(key, v)?,
            "corrupt.eta_m" => self.eta_m = as_f64(key, v)?,
            "corrupt.eta_e" => self.eta_e = as_f64(key, v)?,
            "mr.enabled" => self.mr.enabled = as_bool(key, v)?,
            "mr.rho_rule" => self.mr.rho_rule = as_str(key, v)?.to_string(),
            "mr.rho" => self.mr.rho = as_f64(key, v)?,
            "mr.topk" => self.mr.topk = as_usize(key, v)?,
            "mr.tau" => self.mr.tau = as_f64(key, v)?,
            "mr.lambda" => self.mr.lambda = as_f64(key, v)?,
            "mr.sinkhorn" => self.mr.use_sinkhorn = as_bool(key, v)?,
            "mr.small_loss" => self.mr.small_loss = as_bool(key, v)?,
            "mr.sinkhorn_eps" => self.mr.sinkhorn.eps = as_f64(key, v)?,
            "mr.sinkhorn_iters" => self.mr.sinkhorn.max_iter = as_usize(key, v)?,
            "mr.sinkhorn_tol" => self.mr.sinkhorn.tol = as_f64(key, v)?,
            "mr.projection_epochs" => self.mr.projection_epochs = as_usize(key, v)?,
            "mr.projection_batch_size" => self.mr.projection_batch_size = as_usize(key, v)?,
            "mr.projection_lr" => self.mr.projection_lr = as_f64(key, v)?,
            "edit.op" => {
                self.edit.op = match as_str(key, v)? {
                    "none" => None,
                    _ => Some(parse_named(key, v)?),
                }
            }
            "edit.r" => self.edit.r = as_f64(key, v)?,
            "edit.target" => self.edit.target = parse_named(key, v)?,
            "edit.k_user" => self.edit.k_user = as_usize(key, v)?,
            "edit.k_item" => self.edit.k_item = as_usize(key, v)?,
            "eval.ks" => {
                let arr = v.as_array().ok_or_else(|| bad(key, "an array of integers", v))?;
                self.ks = arr.iter().map(|x| as_usize(key, x)).collect::<Result<_>>()?;
            }
            "eval.policy" => self.policy = parse_named(key, v)?,
            "seed" => self.seed = as_u64(key, v)?,
            "seeds" => {
                let arr = v.as_array().ok_or_else(|| bad(key, "an array of integers", v))?;
                self.seeds = arr.iter().map(|x| as_u64(key, x)).collect::<Result<_>>()?;
            }
            "output.dir" => self.output_dir = as_path(key, v)?,
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults overlaid with the keys of a flat JSON object.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("experiment config must be a JSON object"))?;
        let mut cfg = Self::default();
        for (k, v) in obj {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        Self::from_json(&value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => Error::config(format!("{}: {other}", path.display())),
        })
    }

    /// The fully resolved config as a flat JSON object.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in self.entries() {
            map.insert(k, v);
        }
        Value::Object(map)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("config serializes");
        s.push('\n');
        s
    }

    /// Misalignment ratio for one modality.
    pub fn eta_m_for(&self, modality: &str) -> f64 {
        self.eta_m_overrides.get(modality).copied().unwrap_or(self.eta_m)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn has_features(&self) -> bool {
        match self.data.source {
            DataSource::Synth => !self.data.synth.modality_dims.is_empty(),
            DataSource::Files | DataSource::SplitDir => !self.data.features.is_empty(),
        }
    }

    /// Checks ranges and cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        match self.data.source {
            DataSource::Files if self.data.interactions.is_none() => {
                return fail("data.source = files needs data.interactions".into())
            }
            DataSource::SplitDir if self.data.split_dir.is_none() => {
                return fail("data.source = split_dir needs data.split_dir".into())
            }
            _ => {}
        }
        if self.backbone.uses_features() && !self.has_features() {
            return fail(format!("backbone `{}` needs feature tables", self.backbone));
        }
        let any_eta_m = self.eta_m > 0.0 || self.eta_m_overrides.values().any(|&e| e > 0.0);
        if any_eta_m && !self.has_features() {
            return fail("corrupt.eta_m > 0 needs feature tables".into());
        }
        for eta in std::iter::once(self.eta_m).chain(self.eta_m_overrides.values().copied()) {
            if !(0.0..=0.5).contains(&eta) {
                return fail(format!("corrupt.eta_m must be in [0, 0.5], got {eta}"));
            }
        }
        if !(-0.5..=0.5).contains(&self.eta_e) {
            return fail(format!("corrupt.eta_e must be in [-0.5, 0.5], got {}", self.eta_e));
        }
        if self.mr.enabled {
            if !self.has_features() {
                return fail("mr.enabled needs feature tables".into());
            }
            if !self.backbone.uses_features() {
                return fail(format!(
                    "mr.enabled has no effect on backbone `{}`, which ignores features",
                    self.backbone
                ));
            }
            self.mr.rectify_config(self.seed)?;
        } else {
            self.mr.rho_rule()?;
        }
        if self.edit.op.is_some() {
            if !(0.0..1.0).contains(&self.edit.r) {
                return fail(format!("edit.r must be in [0, 1), got {}", self.edit.r));
            }
            if self.edit.k_user == 0 || self.edit.k_item == 0 {
                return fail("edit.k_user and edit.k_item must be at least 1".into());
            }
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return fail("eval.ks must be a nonempty list of positive cutoffs".into());
        }
        if self.shape.dim == 0 || self.shape.knn_k == 0 {
            return fail("backbone.dim and backbone.knn_k must be positive".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| Error::config(format!("train: {e}")))?;
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json_string())
    }
}
