use serde::{Deserialize, Serialize};

use super::affinity::build_affinity;
use super::anchors::{compute_anchors, AnchorConfig, AnchorTable};
use super::projection::{train_projection, ProjectionConfig};
use super::rectify::rectify;
use super::sinkhorn::{row_normalize, sinkhorn, SinkhornConfig};
use crate::corpus::{FeatureTable, SplitDataset};
use crate::error::{Error, Result, StageExt};

/// How the small-loss keep ratio is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RhoRule {
    /// Use this keep ratio as is.
    Fixed { rho: f64 },
    /// Keep the estimated clean share: `1 - eta_m - 0.05`, clamped to `(0, 1]`.
    CleanFraction,
    /// Keep `min(1, eta_m + 0.05)` of each batch.
    Literal,
}

impl RhoRule {
    pub fn name(&self) -> &'static str {
        match self {
            RhoRule::Fixed { .. } => "fixed",
            RhoRule::CleanFraction => "clean_fraction",
            RhoRule::Literal => "literal",
        }
    }

    /// Keep ratio for a modality with (known or assumed) misalignment `eta_m`.
    pub fn keep_ratio(&self, eta_m: f64) -> f64 {
        const INHERENT: f64 = 0.05;
        match *self {
            RhoRule::Fixed { rho } => rho,
            RhoRule::CleanFraction => (1.0 - eta_m - INHERENT).clamp(f64::MIN_POSITIVE, 1.0),
            RhoRule::Literal => (eta_m + INHERENT).min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifyConfig {
    pub rho: RhoRule,
    pub topk: usize,
    pub tau: f64,
    pub lambda: f64,
    pub sinkhorn: SinkhornConfig,
    /// `false` replaces balancing by row normalization.
    pub use_sinkhorn: bool,
    /// `false` trains the projection on every item (keep ratio 1).
    pub small_loss: bool,
    pub projection: ProjectionConfig,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        Self {
            rho: RhoRule::CleanFraction,
            topk: 20,
            tau: 0.1,
            lambda: 0.5,
            sinkhorn: SinkhornConfig::default(),
            use_sinkhorn: true,
            small_loss: true,
            projection: ProjectionConfig::default(),
        }
    }
}

impl RectifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topk == 0 || !(self.tau > 0.0) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("need topk >= 1, tau > 0 and lambda in [0, 1]"));
        }
        if let RhoRule::Fixed { rho } = self.rho {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::invalid(format!("keep ratio must be in (0, 1], got {rho}")));
            }
        }
        Ok(())
    }

    /// Variant tag used in provenance: `full`, `wo_sink`, `wo_sl` or `wo_sink_sl`.
    pub fn variant(&self) -> &'static str {
        match (self.use_sinkhorn, self.small_loss) {
            (true, true) => "full",
            (false, true) => "wo_sink",
            (true, false) => "wo_sl",
            (false, false) => "wo_sink_sl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityProvenance {
    pub modality: String,
    pub assumed_eta_m: f64,
    pub keep_ratio: f64,
    pub matching: String,
    pub sinkhorn_iterations: usize,
    pub initial_deviation: f64,
    pub final_deviation: f64,
    pub kept_loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub variant: String,
    pub rho_rule: String,
    pub topk: usize,
    pub tau: f64,
    pub lambda: f64,
    pub sinkhorn: SinkhornConfig,
    pub anchor_zero_rows: usize,
    pub modalities: Vec<ModalityProvenance>,
}

/// Output of the rectification stages.
#[derive(Debug, Clone)]
pub struct Rectified {
    pub features: Vec<FeatureTable>,
    pub provenance: Provenance,
}

/// Projection, affinity, matching and mixing for each table against fixed
/// anchors. `eta_m` supplies the assumed misalignment per modality for the
/// keep-ratio rule (missing modalities assume zero).
pub fn rectify_with_anchors(
    anchors: &AnchorTable,
    features: &[FeatureTable],
    eta_m: &[(String, f64)],
    config: &RectifyConfig,
) -> Result<Rectified> {
    config.validate()?;
    let mut out = Vec::with_capacity(features.len());
    let mut reports = Vec::with_capacity(features.len());
    for table in features {
        let eta = eta_m
            .iter()
            .find(|(tag, _)| tag == table.modality())
            .map_or(0.0, |(_, e)| *e);
        let keep = if config.small_loss {
            config.rho.keep_ratio(eta)
        } else {
            1.0
        };
        let projector = train_projection(table, anchors, keep, &config.projection).stage("projection")?;
        let affinity = build_affinity(anchors, &projector, table, config.topk, config.tau).stage("affinity")?;
        let matching = if config.use_sinkhorn {
            sinkhorn(&affinity, &config.sinkhorn).stage("sinkhorn")?
        } else {
            row_normalize(&affinity)
        };
        out.push(rectify(table, &matching, config.lambda).stage("rectify")?);
        reports.push(ModalityProvenance {
            modality: table.modality().to_owned(),
            assumed_eta_m: eta,
            keep_ratio: keep,
            matching: if config.use_sinkhorn { "sinkhorn" } else { "row_norm" }.into(),
            sinkhorn_iterations: matching.iterations,
            initial_deviation: matching.initial_deviation,
            final_deviation: matching.deviation,
            kept_loss_curve: projector.loss_log,
        });
    }
    Ok(Rectified {
        features: out,
        provenance: Provenance {
            variant: config.variant().into(),
            rho_rule: if config.small_loss { config.rho.name() } else { "disabled" }.into(),
            topk: config.topk,
            tau: config.tau,
            lambda: config.lambda,
            sinkhorn: config.sinkhorn,
            anchor_zero_rows: anchors.zero_rows().len(),
            modalities: reports,
        },
    })
}

/// Full offline pipeline: anchors from `split.train` (pass a split whose
/// `train` is the edge set the anchors should see), then per-modality
/// rectification.
pub fn rectify_pipeline(
    split: &SplitDataset,
    features: &[FeatureTable],
    eta_m: &[(String, f64)],
    config: &RectifyConfig,
    anchor_config: &AnchorConfig,
) -> Result<Rectified> {
    config.validate()?;
    for table in features {
        table.expect_rows(split.num_items())?;
    }
    let anchors = compute_anchors(split, anchor_config).stage("anchors")?;
    rectify_with_anchors(&anchors.table, features, eta_m, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_rules() {
        assert!((RhoRule::CleanFraction.keep_ratio(0.2) - 0.75).abs() < 1e-12);
        assert!((RhoRule::Literal.keep_ratio(0.2) - 0.25).abs() < 1e-12);
        assert_eq!(RhoRule::Literal.keep_ratio(0.99), 1.0);
        assert_eq!(RhoRule::Fixed { rho: 0.4 }.keep_ratio(0.3), 0.4);
        assert!(RhoRule::CleanFraction.keep_ratio(0.5) > 0.0);
    }

    #[test]
    fn variant_names() {
        let mut cfg = RectifyConfig::default();
        assert_eq!(cfg.variant(), "full");
        cfg.use_sinkhorn = false;
        assert_eq!(cfg.variant(), "wo_sink");
        cfg.use_sinkhorn = true;
        cfg.small_loss = false;
        assert_eq!(cfg.variant(), "wo_sl");
    }

    #[test]
    fn defaults_match_declared_values() {
        let cfg = RectifyConfig::default();
        assert_eq!((cfg.lambda, cfg.tau, cfg.topk), (0.5, 0.1, 20));
        assert_eq!(cfg.sinkhorn.eps, 1e-8);
        assert_eq!(cfg.sinkhorn.max_iter, 50);
    }
}
