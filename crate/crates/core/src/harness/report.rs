use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::config::ExperimentConfig;
use super::sweep::{format_value, mean_sd, Variant};
use crate::error::{Error, Result};
use crate::evaluator::MetricsReport;

/// One plot-ready observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub variant: String,
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub metric: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<LongRow>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,axis,value,seed,metric,score\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant, r.axis, r.value, r.seed, r.metric, r.score
            ));
        }
        out
    }

    /// Mean and sample sd over seeds per (variant, axis, value, metric).
    pub fn aggregate_csv(&self) -> String {
        let mut groups: Vec<((String, String, String, String), Vec<f64>)> = Vec::new();
        for r in &self.rows {
            let key = (r.variant.clone(), r.axis.clone(), r.value.clone(), r.metric.clone());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r.score),
                None => groups.push((key, vec![r.score])),
            }
        }
        let mut out = String::from("variant,axis,value,metric,seeds,mean,sd\n");
        for ((variant, axis, value, metric), scores) in groups {
            let (mean, sd) = mean_sd(&scores);
            out.push_str(&format!("{variant},{axis},{value},{metric},{},{mean},{sd}\n", scores.len()));
        }
        out
    }
}

fn schema(bundle: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        bundle: bundle.display().to_string(),
        message: message.into(),
    }
}

fn read_json(bundle: &Path, name: &str) -> Result<Option<Value>> {
    let path = bundle.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| schema(bundle, format!("{name} is not valid JSON: {e}")))
}

struct Loaded {
    path: PathBuf,
    variant: String,
    axis: String,
    value: String,
    seed: u64,
    metrics: BTreeMap<String, f64>,
}

fn load_bundle(dir: &Path) -> Result<Loaded> {
    let metrics = read_json(dir, "metrics.json")?.ok_or_else(|| schema(dir, "metrics.json is missing"))?;
    let metrics = MetricsReport::from_json(&metrics)
        .map_err(|e| schema(dir, format!("metrics.json: {e}")))?
        .metric_map();
    let config = match read_json(dir, "config.json")? {
        Some(v) => ExperimentConfig::from_json(&v).map_err(|e| schema(dir, format!("config.json: {e}")))?,
        None => return Err(schema(dir, "config.json is missing")),
    };
    let cell = read_json(dir, "cell.json")?;
    let field = |name: &str| cell.as_ref().and_then(|c| c.get(name)).cloned();
    let variant = field("variant")
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| Variant::of(&config));
    let axis = field("axis")
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "none".into());
    let value = field("value").and_then(|v| v.as_f64()).map(format_value).unwrap_or_default();
    Ok(Loaded {
        path: dir.to_path_buf(),
        variant,
        axis,
        value,
        seed: config.seed,
        metrics,
    })
}

/// Long-format rows `(variant, axis, value, seed, metric, score)` for the
/// given bundle directories, in input order. Every bundle must carry the
/// same metric keys.
pub fn report(bundles: &[PathBuf]) -> Result<Report> {
    let loaded: Vec<Loaded> = bundles.iter().map(|b| load_bundle(b)).collect::<Result<_>>()?;
    let all: BTreeSet<&String> = loaded.iter().flat_map(|l| l.metrics.keys()).collect();
    for l in &loaded {
        if let Some(missing) = all.iter().find(|m| !l.metrics.contains_key(**m)) {
            return Err(schema(&l.path, format!("metric `{missing}` is missing")));
        }
    }
    let mut rows = Vec::new();
    for l in loaded {
        for (metric, score) in l.metrics {
            rows.push(LongRow {
                variant: l.variant.clone(),
                axis: l.axis.clone(),
                value: l.value.clone(),
                seed: l.seed,
                metric,
                score,
            });
        }
    }
    Ok(Report { rows })
}

/// Every directory under `root` (inclusive) holding a `metrics.json`,
/// sorted by path.
pub fn find_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("metrics.json").is_file() {
            found.push(dir.clone());
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}
