//! Full-ranking Recall@K and NDCG@K.
//!
//! Every item is scored for every user with at least one target item; items
//! in the user's filter set are removed before taking the top K. Ties go to
//! the lower item index. The filter set defaults to the training positives
//! frozen when the split was built, so edits to the supervision edges never
//! change which items compete for the top slots.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backbone::ScoringView;
use crate::corpus::{InteractionSet, SplitDataset};
use crate::error::{Error, Result};

/// Anything that can score all items for a user.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;
    fn score_user(&self, user: usize, out: &mut [f64]);
}

impl Scorer for ScoringView {
    fn num_items(&self) -> usize {
        ScoringView::num_items(self)
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        let w = self.width;
        let u = &self.users[user * w..(user + 1) * w];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = crate::util::dot(u, &self.items[i * w..(i + 1) * w]);
        }
    }
}

/// Scores from a dense `users x items` table.
#[derive(Debug, Clone)]
pub struct DenseScores {
    pub num_items: usize,
    pub values: Vec<f64>,
}

impl Scorer for DenseScores {
    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.values[user * self.num_items..(user + 1) * self.num_items]);
    }
}

/// Item popularity in a reference edge set, identical for every user.
#[derive(Debug, Clone)]
pub struct PopularityScorer {
    counts: Vec<f64>,
}

impl PopularityScorer {
    pub fn new(edges: &InteractionSet) -> Self {
        Self {
            counts: edges.item_degrees().into_iter().map(|c| c as f64).collect(),
        }
    }
}

impl Scorer for PopularityScorer {
    fn num_items(&self) -> usize {
        self.counts.len()
    }

    fn score_user(&self, _user: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.counts);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPolicy {
    /// Filter the training positives frozen at split time.
    OriginalPositives,
    /// Filter the current (possibly edited) supervision edges.
    CurrentPositives,
}

impl FilterPolicy {
    pub fn name(self) -> &'static str {
        match self {
            FilterPolicy::OriginalPositives => "original_positives",
            FilterPolicy::CurrentPositives => "current_positives",
        }
    }
}

impl fmt::Display for FilterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original_positives" | "original" => Ok(FilterPolicy::OriginalPositives),
            "current_positives" | "current" => Ok(FilterPolicy::CurrentPositives),
            other => Err(Error::invalid(format!("unknown filter policy `{other}`"))),
        }
    }
}

fn better(scores: &[f64]) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + '_ {
    move |a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
}

/// Full item order for one user: unfiltered items by descending score, then
/// filtered items (treated as `-inf`), ties by lower index throughout.
pub fn rank_items(scores: &[f64], filtered: &[u32]) -> Vec<usize> {
    let mut masked = scores.to_vec();
    for &i in filtered {
        masked[i as usize] = f64::NEG_INFINITY;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(better(&masked));
    order
}

/// The first `k` entries of [`rank_items`] restricted to unfiltered items.
/// `filtered` must be sorted.
pub fn top_k_filtered(scores: &[f64], filtered: &[u32], k: usize) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    if k == 0 {
        return best;
    }
    let cmp = better(scores);
    // `filtered` is sorted, so a single merge pass skips it.
    let mut skip = filtered.iter().peekable();
    for i in 0..scores.len() {
        while skip.next_if(|&&f| (f as usize) < i).is_some() {}
        if skip.next_if(|&&f| f as usize == i).is_some() {
            continue;
        }
        if best.len() == k {
            if cmp(&i, &best[k - 1]) != std::cmp::Ordering::Less {
                continue;
            }
            best.pop();
        }
        let pos = best.partition_point(|b| cmp(b, &i) == std::cmp::Ordering::Less);
        best.insert(pos, i);
    }
    best
}

fn is_hit(truth: &[u32], item: usize) -> bool {
    truth.binary_search(&(item as u32)).is_ok()
}

/// `|top-K ∩ truth| / |truth|`; `truth` must be sorted and nonempty.
pub fn recall_at_k(ranked: &[usize], truth: &[u32], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("recall undefined for an empty truth set"));
    }
    let hits = ranked.iter().take(k).filter(|&&i| is_hit(truth, i)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Binary-gain NDCG with `1 / log2(p + 1)` discount and the ideal DCG taken
/// over `min(K, |truth|)` positions; `truth` must be sorted and nonempty.
pub fn ndcg_at_k(ranked: &[usize], truth: &[u32], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("NDCG undefined for an empty truth set"));
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| is_hit(truth, i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(truth.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// Users with at least one target item.
    pub users: usize,
    pub filter_policy: FilterPolicy,
}

impl MetricsReport {
    fn position(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.position(k).map(|p| self.recall[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.position(k).map(|p| self.ndcg[p])
    }

    /// `{"recall@10": .., "ndcg@10": .., ...}`.
    pub fn metric_map(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (p, k) in self.ks.iter().enumerate() {
            out.insert(format!("recall@{k}"), self.recall[p]);
            out.insert(format!("ndcg@{k}"), self.ndcg[p]);
        }
        out
    }

    /// Report JSON: one object per K plus user count and filter policy.
    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for (p, k) in self.ks.iter().enumerate() {
            map.insert(k.to_string(), json!({"recall": self.recall[p], "ndcg": self.ndcg[p]}));
        }
        map.insert("users".into(), json!(self.users));
        map.insert("filter_policy".into(), json!(self.filter_policy.name()));
        map.insert("ndcg_averaging".into(), json!("all_test_users"));
        Value::Object(map)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::invalid("metrics report must be a JSON object"))?;
        let mut ks = Vec::new();
        let mut recall = Vec::new();
        let mut ndcg = Vec::new();
        let mut entries: Vec<(usize, &Value)> = obj
            .iter()
            .filter_map(|(key, v)| key.parse::<usize>().ok().map(|k| (k, v)))
            .collect();
        entries.sort_by_key(|(k, _)| *k);
        for (k, v) in entries {
            let get = |name: &str| {
                v.get(name)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::invalid(format!("metric {name}@{k} missing")))
            };
            ks.push(k);
            recall.push(get("recall")?);
            ndcg.push(get("ndcg")?);
        }
        let users = obj
            .get("users")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::invalid("`users` missing"))? as usize;
        let filter_policy = obj
            .get("filter_policy")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::invalid("`filter_policy` missing"))?
            .parse()?;
        Ok(Self {
            ks,
            recall,
            ndcg,
            users,
            filter_policy,
        })
    }
}

/// Users processed per evaluation batch.
pub const EVAL_BATCH_USERS: usize = 4096;

/// Averages Recall/NDCG over users with at least one `truth` edge, filtering
/// each user's items in `filter`.
pub fn evaluate_against(
    scorer: &dyn Scorer,
    truth: &InteractionSet,
    filter: &InteractionSet,
    ks: &[usize],
    policy: FilterPolicy,
    batch_users: usize,
) -> MetricsReport {
    let truth_lists = truth.items_by_user();
    let filter_lists = filter.items_by_user();
    let users: Vec<usize> = (0..truth.num_users()).filter(|&u| !truth_lists[u].is_empty()).collect();
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    for chunk in users.chunks(batch_users.max(1)) {
        let per_user: Vec<(Vec<f64>, Vec<f64>)> = chunk
            .par_iter()
            .map_init(
                || vec![0.0; scorer.num_items()],
                |scores, &u| {
                    scorer.score_user(u, scores);
                    let top = top_k_filtered(scores, &filter_lists[u], max_k);
                    let truth = &truth_lists[u];
                    let r = ks.iter().map(|&k| recall_at_k(&top, truth, k).expect("nonempty")).collect();
                    let n = ks.iter().map(|&k| ndcg_at_k(&top, truth, k).expect("nonempty")).collect();
                    (r, n)
                },
            )
            .collect();
        // Summation in user order keeps the result independent of threading.
        for (r, n) in per_user {
            for p in 0..ks.len() {
                recall[p] += r[p];
                ndcg[p] += n[p];
            }
        }
    }
    let count = users.len();
    if count > 0 {
        recall.iter_mut().for_each(|v| *v /= count as f64);
        ndcg.iter_mut().for_each(|v| *v /= count as f64);
    }
    MetricsReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        users: count,
        filter_policy: policy,
    }
}

/// Test-set evaluation. `OriginalPositives` filters the split's frozen
/// training positives; `CurrentPositives` filters `split.train` as it is now.
pub fn evaluate(scorer: &dyn Scorer, split: &SplitDataset, ks: &[usize], policy: FilterPolicy) -> MetricsReport {
    let filter = match policy {
        FilterPolicy::OriginalPositives => split.original_train_positives(),
        FilterPolicy::CurrentPositives => &split.train,
    };
    evaluate_against(scorer, &split.test, filter, ks, policy, EVAL_BATCH_USERS)
}

/// Validation Recall@K, filtering only training positives so validation
/// items stay rankable.
pub fn validation_recall(scorer: &dyn Scorer, split: &SplitDataset, k: usize) -> f64 {
    evaluate_against(
        scorer,
        &split.val,
        split.original_train_positives(),
        &[k],
        FilterPolicy::OriginalPositives,
        EVAL_BATCH_USERS,
    )
    .recall[0]
}
