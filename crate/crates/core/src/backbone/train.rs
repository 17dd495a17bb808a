use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::bpr::{bpr_loss_and_grad, Triplet};
use super::graph::build_norm_adjacency;
use super::model::EmbeddingModel;
use crate::corpus::{InteractionSet, SplitDataset};
use crate::error::{Error, Result};
use crate::evaluator::validation_recall;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// L2 coefficient on touched embeddings.
    pub l2: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Cutoff of the validation Recall used for early stopping.
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            l2: 1e-4,
            batch_size: 2048,
            eval_batch_size: 4096,
            max_epochs: 1000,
            patience: 30,
            eval_k: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::invalid("learning rate must be positive and L2 nonnegative"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.max_epochs == 0 || self.eval_k == 0 {
            return Err(Error::invalid("batch sizes, epoch budget and eval_k must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to strictly beat the best
/// validation score.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> Progress {
        self.epoch += 1;
        if metric > self.best {
            self.best = metric;
            self.best_epoch = self.epoch;
            Progress::Improved
        } else if self.epoch - self.best_epoch >= self.patience {
            Progress::Stop
        } else {
            Progress::Stalled
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self, eval_k: usize) -> String {
        let mut out = format!("epoch,loss,val_recall@{eval_k}\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.val_recall));
        }
        out
    }
}

/// BPR training with Adam and early stopping on validation Recall@K.
/// Supervision comes from `split.train`; message passing uses `propagation`
/// when given, `split.train` otherwise.
pub fn train(
    model: EmbeddingModel,
    split: &SplitDataset,
    config: &TrainConfig,
    propagation: Option<&InteractionSet>,
) -> Result<(EmbeddingModel, TrainHistory)> {
    let k = config.eval_k;
    train_with(model, split, config, propagation, |m| {
        let view = m.scoring_view().expect("model propagated before validation");
        validation_recall(&view, split, k)
    })
}

/// [`train`] with a caller-supplied validation metric.
pub fn train_with(
    mut model: EmbeddingModel,
    split: &SplitDataset,
    config: &TrainConfig,
    propagation: Option<&InteractionSet>,
    mut validate: impl FnMut(&EmbeddingModel) -> f64,
) -> Result<(EmbeddingModel, TrainHistory)> {
    config.validate()?;
    let supervision = &split.train;
    if supervision.is_empty() {
        return Err(Error::invalid("cannot train on an empty training set"));
    }
    let graph = build_norm_adjacency(propagation.unwrap_or(supervision));
    let positives = supervision.items_by_user();
    let n = model.num_items();
    let mut rng = SplitMix64::derive(config.seed, "train");
    let mut adam = Adam::new(config.lr, &model.params.table_sizes());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut last_finite = f64::NAN;

    let mut order: Vec<usize> = (0..supervision.len()).collect();
    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Triplet> = chunk
                .iter()
                .filter_map(|&e| {
                    let (u, i) = supervision.edges()[e];
                    let pos = &positives[u as usize];
                    if pos.len() >= n {
                        return None;
                    }
                    let neg = loop {
                        let j = rng.below(n) as u32;
                        if pos.binary_search(&j).is_err() {
                            break j;
                        }
                    };
                    Some(Triplet { user: u, pos: i, neg })
                })
                .collect();
            if batch.is_empty() {
                continue;
            }
            let (loss, grads) = bpr_loss_and_grad(&model, Some(&graph), &batch, config.l2, true)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    last_finite,
                });
            }
            last_finite = loss;
            total += loss * batch.len() as f64;
            seen += batch.len();
            adam.update(&mut model.params.tables_mut(), &grads.tables());
        }
        model.invalidate();
        model.propagate(&graph)?;
        let val_recall = validate(&model);
        records.push(EpochRecord {
            epoch,
            loss: total / seen.max(1) as f64,
            val_recall,
        });
        match stopper.observe(val_recall) {
            Progress::Improved => best_params = model.params.clone(),
            Progress::Stalled => {}
            Progress::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best_params;
    model.propagate(&graph)?;
    Ok((
        model,
        TrainHistory {
            records,
            best_epoch: stopper.best_epoch(),
            best_val_recall: stopper.best(),
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_stops_at_epoch_31() {
        let mut stop = EarlyStopping::new(30);
        let mut epochs = 0;
        loop {
            epochs += 1;
            if stop.observe(0.5) == Progress::Stop {
                break;
            }
        }
        assert_eq!(epochs, 31);
        assert_eq!(stop.best_epoch(), 1);
    }

    #[test]
    fn improving_metric_never_stops() {
        let mut stop = EarlyStopping::new(30);
        for e in 0..1000 {
            assert_eq!(stop.observe(e as f64), Progress::Improved);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
