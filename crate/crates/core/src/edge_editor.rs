//! Interaction-level editing driven by a collaborative prior: prune the
//! least plausible training edges, or complete the most plausible missing
//! ones, then apply the edit to supervision, propagation, or both.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::EmbeddingModel;
use crate::corpus::{Edge, InteractionSet, SplitDataset};
use crate::error::{Error, Result};
use crate::evaluator::top_k_filtered;
use crate::util::{dot, floor_count};

pub const DEFAULT_RATIO: f64 = 0.05;
pub const DEFAULT_K_USER: usize = 10;
pub const DEFAULT_K_ITEM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Prune,
    Complete,
}

impl EditOp {
    pub fn name(self) -> &'static str {
        match self {
            Self::Prune => "prune",
            Self::Complete => "complete",
        }
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prune" => Ok(Self::Prune),
            "complete" | "add" => Ok(Self::Complete),
            other => Err(Error::invalid(format!("unknown edit op `{other}` (expected prune or complete)"))),
        }
    }
}

/// Which edge set an edit applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditTarget {
    /// BPR supervision only; message passing keeps the original edges.
    TrainOnly,
    /// Message passing only; supervision keeps the original edges.
    GraphOnly,
    Both,
}

impl EditTarget {
    pub const ALL: [EditTarget; 3] = [Self::TrainOnly, Self::GraphOnly, Self::Both];

    pub fn name(self) -> &'static str {
        match self {
            Self::TrainOnly => "train",
            Self::GraphOnly => "graph",
            Self::Both => "both",
        }
    }
}

impl fmt::Display for EditTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "train_only" => Ok(Self::TrainOnly),
            "graph" | "graph_only" => Ok(Self::GraphOnly),
            "both" => Ok(Self::Both),
            other => Err(Error::invalid(format!("unknown edit target `{other}` (expected train, graph or both)"))),
        }
    }
}

/// An edge with its prior similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredEdge {
    pub user: u32,
    pub item: u32,
    pub score: f64,
}

impl ScoredEdge {
    pub fn edge(&self) -> Edge {
        (self.user, self.item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditProvenance {
    /// Identifies the prior the scores came from (checkpoint path or run tag).
    pub prior: String,
    pub k_user: usize,
    pub k_item: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditPlan {
    pub op: EditOp,
    pub removals: Vec<ScoredEdge>,
    pub additions: Vec<ScoredEdge>,
    pub target: EditTarget,
    pub r: f64,
    pub provenance: EditProvenance,
}

impl EditPlan {
    pub fn is_empty(&self) -> bool {
        self.removals.is_empty() && self.additions.is_empty()
    }

    pub fn with_target(mut self, target: EditTarget) -> Self {
        self.target = target;
        self
    }

    /// TSV with `#` metadata lines and `op u i s` rows (`-` removal, `+`
    /// addition).
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# op={} target={} r={} prior={} k_user={} k_item={}\nop\tu\ti\ts\n",
            self.op, self.target, self.r, self.provenance.prior, self.provenance.k_user, self.provenance.k_item
        );
        for (sign, list) in [("-", &self.removals), ("+", &self.additions)] {
            for e in list {
                out.push_str(&format!("{sign}\t{}\t{}\t{}\n", e.user, e.item, e.score));
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse {
            path: "<edit plan>".into(),
            line,
            message,
        };
        let mut plan = EditPlan {
            op: EditOp::Prune,
            removals: Vec::new(),
            additions: Vec::new(),
            target: EditTarget::Both,
            r: 0.0,
            provenance: EditProvenance {
                prior: String::new(),
                k_user: DEFAULT_K_USER,
                k_item: DEFAULT_K_ITEM,
            },
        };
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    let Some((k, v)) = kv.split_once('=') else { continue };
                    let num = |v: &str| v.parse::<usize>().map_err(|e| bad(lineno, format!("{k}: {e}")));
                    match k {
                        "op" => plan.op = v.parse()?,
                        "target" => plan.target = v.parse()?,
                        "r" => plan.r = v.parse().map_err(|e| bad(lineno, format!("r: {e}")))?,
                        "prior" => plan.provenance.prior = v.to_string(),
                        "k_user" => plan.provenance.k_user = num(v)?,
                        "k_item" => plan.provenance.k_item = num(v)?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() || line.starts_with("op\t") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 4 {
                return Err(bad(lineno, "expected 4 tab-separated columns".into()));
            }
            let parse_u32 = |s: &str| s.parse::<u32>().map_err(|e| bad(lineno, e.to_string()));
            let edge = ScoredEdge {
                user: parse_u32(cols[1])?,
                item: parse_u32(cols[2])?,
                score: cols[3].parse().map_err(|e: std::num::ParseFloatError| bad(lineno, e.to_string()))?,
            };
            match cols[0] {
                "-" => plan.removals.push(edge),
                "+" => plan.additions.push(edge),
                other => return Err(bad(lineno, format!("unknown op `{other}`"))),
            }
        }
        Ok(plan)
    }
}

fn prior_tables(prior: &EmbeddingModel) -> Result<(&[f64], &[f64], usize)> {
    let (users, items) = prior.final_embeddings()?;
    Ok((users, items, prior.dim()))
}

/// `s_ui = <e_u, e_i>` from the prior's layer-averaged embeddings.
pub fn collab_similarity(prior: &EmbeddingModel, pairs: &[Edge]) -> Result<Vec<f64>> {
    let (users, items, d) = prior_tables(prior)?;
    let (m, n) = (prior.num_users(), prior.num_items());
    pairs
        .iter()
        .map(|&(u, i)| {
            let (u, i) = (u as usize, i as usize);
            if u >= m || i >= n {
                return Err(Error::invalid(format!("pair ({u}, {i}) outside {m} x {n}")));
            }
            Ok(dot(&users[u * d..(u + 1) * d], &items[i * d..(i + 1) * d]))
        })
        .collect()
}

fn check_ratio(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::invalid(format!("edit ratio r must lie in [0, 1), got {r}")));
    }
    Ok(())
}

fn check_dims(train: &InteractionSet, prior: &EmbeddingModel) -> Result<()> {
    if train.num_users() != prior.num_users() || train.num_items() != prior.num_items() {
        return Err(Error::Shape(format!(
            "prior is {} x {} but the training set is {} x {}",
            prior.num_users(),
            prior.num_items(),
            train.num_users(),
            train.num_items()
        )));
    }
    Ok(())
}

fn scored(pairs: &[Edge], scores: Vec<f64>) -> Vec<ScoredEdge> {
    pairs
        .iter()
        .zip(scores)
        .map(|(&(user, item), score)| ScoredEdge { user, item, score })
        .collect()
}

/// Removes the `floor(r |E|)` training edges with the lowest prior
/// similarity, ranked globally (ties by `(u, i)`).
pub fn prune_edges(train: &InteractionSet, prior: &EmbeddingModel, r: f64, provenance: EditProvenance) -> Result<EditPlan> {
    check_ratio(r)?;
    check_dims(train, prior)?;
    let count = floor_count(r, train.len());
    let mut ranked = scored(train.edges(), collab_similarity(prior, train.edges())?);
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.edge().cmp(&b.edge())));
    ranked.truncate(count);
    Ok(EditPlan {
        op: EditOp::Prune,
        removals: ranked,
        additions: Vec::new(),
        target: EditTarget::Both,
        r,
        provenance,
    })
}

/// Adds up to `floor(r |E|)` missing edges. Candidates are each user's
/// top-`k_user` non-training items and each item's top-`k_item`
/// non-training users; the best candidates overall are selected first and
/// pairs in `holdout` are dropped afterwards, without back-filling.
pub fn complete_edges(
    train: &InteractionSet,
    prior: &EmbeddingModel,
    r: f64,
    k_user: usize,
    k_item: usize,
    holdout: &InteractionSet,
    provenance: EditProvenance,
) -> Result<EditPlan> {
    check_ratio(r)?;
    check_dims(train, prior)?;
    if k_user == 0 || k_item == 0 {
        return Err(Error::invalid("k_user and k_item must be at least 1"));
    }
    let count = floor_count(r, train.len());
    let mut plan = EditPlan {
        op: EditOp::Complete,
        removals: Vec::new(),
        additions: Vec::new(),
        target: EditTarget::Both,
        r,
        provenance,
    };
    if count == 0 {
        return Ok(plan);
    }
    let (users, items, d) = prior_tables(prior)?;
    let (m, n) = (train.num_users(), train.num_items());
    let items_of = train.items_by_user();
    let mut users_of: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(u, i) in train.edges() {
        users_of[i as usize].push(u);
    }

    let by_user: Vec<Edge> = (0..m)
        .into_par_iter()
        .flat_map_iter(|u| {
            let eu = &users[u * d..(u + 1) * d];
            let scores: Vec<f64> = (0..n).map(|i| dot(eu, &items[i * d..(i + 1) * d])).collect();
            top_k_filtered(&scores, &items_of[u], k_user)
                .into_iter()
                .map(move |i| (u as u32, i as u32))
        })
        .collect();
    let by_item: Vec<Edge> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ei = &items[i * d..(i + 1) * d];
            let scores: Vec<f64> = (0..m).map(|u| dot(&users[u * d..(u + 1) * d], ei)).collect();
            top_k_filtered(&scores, &users_of[i], k_item)
                .into_iter()
                .map(move |u| (u as u32, i as u32))
        })
        .collect();

    let candidates: Vec<Edge> = by_user.into_iter().chain(by_item).collect::<BTreeSet<_>>().into_iter().collect();
    let mut ranked = scored(&candidates, collab_similarity(prior, &candidates)?);
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.edge().cmp(&b.edge())));
    ranked.truncate(count);
    ranked.retain(|e| !holdout.contains(e.user, e.item));
    plan.additions = ranked;
    Ok(plan)
}

/// Supervision and propagation edge sets after applying `plan` to
/// `split.train`. The split itself (including its evaluation filter) is
/// left untouched.
pub fn apply_edit(split: &SplitDataset, plan: &EditPlan) -> Result<(InteractionSet, InteractionSet)> {
    let train = &split.train;
    let (m, n) = (train.num_users(), train.num_items());
    let removals = InteractionSet::new(m, n, plan.removals.iter().map(ScoredEdge::edge))?;
    let additions = InteractionSet::new(m, n, plan.additions.iter().map(ScoredEdge::edge))?;
    if let Some(e) = removals.edges().iter().find(|e| !train.contains(e.0, e.1)) {
        return Err(Error::invalid(format!("removal ({}, {}) is not a training edge", e.0, e.1)));
    }
    if let Some(e) = additions.edges().iter().find(|e| train.contains(e.0, e.1)) {
        return Err(Error::invalid(format!("addition ({}, {}) is already a training edge", e.0, e.1)));
    }
    let holdout = split.holdout();
    if let Some(e) = additions.edges().iter().find(|e| holdout.contains(e.0, e.1)) {
        return Err(Error::invalid(format!("addition ({}, {}) is a validation/test pair", e.0, e.1)));
    }
    let edited = train.difference(&removals)?.union(&additions)?;
    Ok(match plan.target {
        EditTarget::TrainOnly => (edited, train.clone()),
        EditTarget::GraphOnly => (train.clone(), edited),
        EditTarget::Both => (edited.clone(), edited),
    })
}
