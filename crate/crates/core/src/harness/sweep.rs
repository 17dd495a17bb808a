use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde_json::json;

use super::config::ExperimentConfig;
use super::run::{Bundle, Runner};
use crate::edge_editor::{EditOp, EditTarget};
use crate::error::{Error, Result, StageExt};

pub const DEFAULT_ETA_M_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_ETA_E_GRID: [f64; 7] = [-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15];
/// The mix weight is most useful around 0.3–0.6.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    EtaM,
    EtaE,
    Lambda,
    Tau,
    Rho,
    R,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::EtaM => "eta_m",
            Self::EtaE => "eta_e",
            Self::Lambda => "lambda",
            Self::Tau => "tau",
            Self::Rho => "rho",
            Self::R => "r",
        }
    }

    /// Rectification axes compare Base with Rect; interaction axes compare
    /// Base with every edit op and target.
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Self::EtaM | Self::Lambda | Self::Tau | Self::Rho => vec![Variant::Base, Variant::Rect],
            Self::EtaE | Self::R => {
                let mut v = vec![Variant::Base];
                for op in [EditOp::Complete, EditOp::Prune] {
                    for target in EditTarget::ALL {
                        v.push(Variant::Edit(op, target));
                    }
                }
                v
            }
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::EtaM => DEFAULT_ETA_M_GRID.to_vec(),
            Self::EtaE => DEFAULT_ETA_E_GRID.to_vec(),
            Self::Lambda => DEFAULT_LAMBDA_GRID.to_vec(),
            Self::Tau => vec![0.05, 0.1, 0.2, 0.5],
            Self::Rho => vec![0.25, 0.5, 0.75, 1.0],
            Self::R => vec![0.0, 0.05, 0.1],
        }
    }

    /// Writes `value` into the config field this axis controls.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            Self::EtaM => {
                cfg.eta_m = value;
                cfg.eta_m_overrides.clear();
            }
            Self::EtaE => cfg.eta_e = value,
            Self::Lambda => cfg.mr.lambda = value,
            Self::Tau => cfg.mr.tau = value,
            Self::Rho => {
                cfg.mr.rho_rule = "fixed".into();
                cfg.mr.rho = value;
            }
            Self::R => cfg.edit.r = value,
        }
    }

    fn check_applicable(self, cfg: &ExperimentConfig) -> Result<()> {
        let rectification = matches!(self, Self::EtaM | Self::Lambda | Self::Tau | Self::Rho);
        if rectification && !(cfg.has_features() && cfg.backbone.uses_features()) {
            return Err(Error::config(format!(
                "sweep axis `{}` needs a feature-consuming backbone with feature tables (backbone is `{}`)",
                self.name(),
                cfg.backbone
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta_m" => Ok(Self::EtaM),
            "eta_e" => Ok(Self::EtaE),
            "lambda" => Ok(Self::Lambda),
            "tau" => Ok(Self::Tau),
            "rho" => Ok(Self::Rho),
            "r" => Ok(Self::R),
            other => Err(Error::config(format!(
                "unknown sweep axis `{other}` (expected eta_m, eta_e, lambda, tau, rho or r)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    Rect,
    Edit(EditOp, EditTarget),
}

impl Variant {
    pub fn name(self) -> String {
        match self {
            Self::Base => "base".into(),
            Self::Rect => "rect".into(),
            Self::Edit(op, target) => {
                let op = match op {
                    EditOp::Complete => "add",
                    EditOp::Prune => "prune",
                };
                format!("{op}_{}", target.name())
            }
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            Self::Base => {
                cfg.mr.enabled = false;
                cfg.edit.op = None;
            }
            Self::Rect => {
                cfg.mr.enabled = true;
                cfg.edit.op = None;
            }
            Self::Edit(op, target) => {
                cfg.mr.enabled = false;
                cfg.edit.op = Some(op);
                cfg.edit.target = target;
            }
        }
    }

    /// Name of the variant a single config describes.
    pub fn of(cfg: &ExperimentConfig) -> String {
        match (cfg.mr.enabled, cfg.edit.op) {
            (_, Some(op)) => Self::Edit(op, cfg.edit.target).name(),
            (true, None) => Self::Rect.name(),
            (false, None) => Self::Base.name(),
        }
    }
}

/// Shortest decimal that round-trips (`0.2`, `-0.15`, `0`).
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub variant: String,
    pub value: f64,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Metric names in column order.
    pub metric_names: Vec<String>,
    /// Ordered by axis value, then seed, then variant.
    pub cells: Vec<SweepCell>,
}

/// Mean and sample standard deviation (zero for a single seed).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub variant: String,
    pub value: f64,
    pub seeds: usize,
    /// `(mean, sd)` per metric, in `metric_names` order.
    pub stats: Vec<(f64, f64)>,
}

impl SweepTable {
    pub fn cell(&self, variant: &str, value: f64, seed: u64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.value == value && c.seed == seed)
    }

    /// One row per (variant, value) in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(String, f64)> = Vec::new();
        for c in &self.cells {
            if !order.iter().any(|(v, x)| *v == c.variant && *x == c.value) {
                order.push((c.variant.clone(), c.value));
            }
        }
        order
            .into_iter()
            .map(|(variant, value)| {
                let group: Vec<&SweepCell> = self
                    .cells
                    .iter()
                    .filter(|c| c.variant == variant && c.value == value)
                    .collect();
                let stats = self
                    .metric_names
                    .iter()
                    .map(|m| mean_sd(&group.iter().map(|c| c.metrics[m]).collect::<Vec<_>>()))
                    .collect();
                SummaryRow {
                    variant,
                    value,
                    seeds: group.len(),
                    stats,
                }
            })
            .collect()
    }

    /// Mean of one metric for a (variant, value) group.
    pub fn mean(&self, variant: &str, value: f64, metric: &str) -> Option<f64> {
        let idx = self.metric_names.iter().position(|m| m == metric)?;
        self.summary()
            .into_iter()
            .find(|r| r.variant == variant && r.value == value)
            .map(|r| r.stats[idx].0)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = format!("variant,axis,value,seed,{}\n", self.metric_names.join(","));
        for c in &self.cells {
            let scores: Vec<String> = self.metric_names.iter().map(|m| c.metrics[m].to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.variant,
                self.axis,
                format_value(c.value),
                c.seed,
                scores.join(",")
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let cols: Vec<String> = self
            .metric_names
            .iter()
            .flat_map(|m| [format!("{m}_mean"), format!("{m}_sd")])
            .collect();
        let mut out = format!("variant,axis,value,seeds,{}\n", cols.join(","));
        for r in self.summary() {
            let stats: Vec<String> = r.stats.iter().flat_map(|(m, s)| [m.to_string(), s.to_string()]).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant,
                self.axis,
                format_value(r.value),
                r.seeds,
                stats.join(",")
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("sweep_cells.csv", self.cells_csv()), ("sweep_summary.csv", self.summary_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// The config a sweep uses for one cell.
pub fn cell_config(base: &ExperimentConfig, axis: SweepAxis, value: f64, seed: u64, variant: Variant) -> ExperimentConfig {
    let mut cfg = base.clone();
    axis.apply(&mut cfg, value);
    variant.apply(&mut cfg);
    cfg.seed = seed;
    cfg.output_dir = base.output_dir.as_ref().map(|dir| {
        dir.join("cells")
            .join(format!("{}={}", axis, format_value(value)))
            .join(format!("seed={seed}"))
            .join(variant.name())
    });
    cfg
}

/// Runs the cross product of `values` x `seeds` x variants. Cell `(v, s)`
/// equals [`super::run_experiment`] on [`cell_config`]; cells share cached
/// data and encoders through one [`Runner`].
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<SweepTable> {
    sweep_with(&mut Runner::new(), config, axis, values, seeds, |_, _| {})
}

/// [`sweep`] with a shared runner and a callback per finished cell.
pub fn sweep_with(
    runner: &mut Runner,
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    mut on_cell: impl FnMut(&SweepCell, &Bundle),
) -> Result<SweepTable> {
    axis.check_applicable(config)?;
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs at least one value and one seed"));
    }
    let mut cells = Vec::new();
    let mut metric_names: Option<Vec<String>> = None;
    for &value in values {
        for &seed in seeds {
            for variant in axis.variants() {
                let cfg = cell_config(config, axis, value, seed, variant);
                let bundle = runner.run(&cfg)?;
                if let Some(dir) = &cfg.output_dir {
                    let path = dir.join("cell.json");
                    let meta = json!({
                        "variant": variant.name(),
                        "axis": axis.name(),
                        "value": value,
                        "seed": seed,
                    });
                    std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&meta).expect("serializes")))
                        .map_err(|e| Error::io(&path, e))
                        .stage("write-bundle")?;
                }
                let metrics = bundle.metrics.metric_map();
                metric_names.get_or_insert_with(|| metrics.keys().cloned().collect());
                let cell = SweepCell {
                    variant: variant.name(),
                    value,
                    seed,
                    metrics,
                };
                on_cell(&cell, &bundle);
                cells.push(cell);
            }
        }
    }
    let table = SweepTable {
        axis,
        metric_names: metric_names.unwrap_or_default(),
        cells,
    };
    if let Some(dir) = &config.output_dir {
        table.write(dir)?;
    }
    Ok(table)
}
