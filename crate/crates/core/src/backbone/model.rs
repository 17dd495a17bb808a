use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{build_item_knn_graph, SparseRowGraph};
use crate::corpus::FeatureTable;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Layer-averaged propagation over the user-item graph, dot-product score.
    Lightgcn,
    /// Matrix factorization plus per-modality projected content terms.
    Vbpr,
    /// LightGCN plus projected features smoothed over a feature kNN item graph.
    ModalityKnn,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Lightgcn => "lightgcn",
            BackboneKind::Vbpr => "vbpr",
            BackboneKind::ModalityKnn => "modality_knn",
        }
    }

    pub fn uses_features(self) -> bool {
        !matches!(self, BackboneKind::Lightgcn)
    }

    /// Whether scores depend on message passing over the user-item graph.
    pub fn propagates(self) -> bool {
        !matches!(self, BackboneKind::Vbpr)
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lightgcn" => Ok(BackboneKind::Lightgcn),
            "vbpr" => Ok(BackboneKind::Vbpr),
            "modality_knn" | "freedom_lite" => Ok(BackboneKind::ModalityKnn),
            other => Err(Error::invalid(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Trainable tables. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `M x d` base user embeddings.
    pub user: Vec<f64>,
    /// `N x d` base item embeddings.
    pub item: Vec<f64>,
    /// Per modality, `d x d_m` projection (row-major).
    pub proj: Vec<Vec<f64>>,
    /// Per modality, `M x d` user preference vectors (VBPR only, else empty).
    pub pref: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Self {
            user: z(&self.user),
            item: z(&self.item),
            proj: self.proj.iter().map(z).collect(),
            pref: self.pref.iter().map(z).collect(),
        }
    }

    pub fn tables(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.user, &self.item];
        out.extend(self.proj.iter().map(Vec::as_slice));
        out.extend(self.pref.iter().map(Vec::as_slice));
        out
    }

    pub fn tables_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.user, &mut self.item];
        out.extend(self.proj.iter_mut().map(Vec::as_mut_slice));
        out.extend(self.pref.iter_mut().map(Vec::as_mut_slice));
        out
    }

    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables().iter().map(|t| t.len()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tables().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Modality input as the scorer consumes it: raw features for VBPR,
/// item-graph-smoothed features for the kNN backbone.
#[derive(Debug, Clone)]
pub struct ModalInput {
    pub tag: String,
    pub dim: usize,
    /// `N x dim`, row-major.
    pub values: Vec<f64>,
}

/// Per-layer node embeddings and their mean; nodes are users then items.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub layers: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// `e^(l+1) = A e^(l)` for `l < layers`, returning all layers and their mean.
pub fn propagate(graph: &SparseRowGraph, e0: &[f64], dim: usize, layers: usize) -> LayerCache {
    let mut all = vec![e0.to_vec()];
    for _ in 0..layers {
        let next = graph.spmm(all.last().expect("layer 0 present"), dim);
        all.push(next);
    }
    let scale = 1.0 / (layers + 1) as f64;
    let mut mean = vec![0.0; e0.len()];
    for layer in &all {
        for (m, v) in mean.iter_mut().zip(layer) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= scale);
    LayerCache { layers: all, mean }
}

/// Transpose of [`propagate`]'s mean with respect to `e^(0)`; the
/// normalized adjacency is symmetric, so this reuses `A`.
pub(crate) fn propagate_adjoint(graph: &SparseRowGraph, grad_mean: &[f64], dim: usize, layers: usize) -> Vec<f64> {
    let scale = 1.0 / (layers + 1) as f64;
    let mut acc = grad_mean.to_vec();
    let mut current = grad_mean.to_vec();
    for _ in 0..layers {
        current = graph.spmm(&current, dim);
        for (a, c) in acc.iter_mut().zip(&current) {
            *a += c;
        }
    }
    acc.iter_mut().for_each(|a| *a *= scale);
    acc
}

/// Xavier-uniform table of shape `rows x cols`.
pub fn xavier_table(rows: usize, cols: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect()
}

/// Shape hyperparameters of a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dim: usize,
    pub layers: usize,
    /// Neighbors per item in the feature kNN graph.
    pub knn_k: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            knn_k: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    kind: BackboneKind,
    num_users: usize,
    num_items: usize,
    shape: ModelShape,
    pub params: Params,
    modal: Vec<ModalInput>,
    item_graph: Option<SparseRowGraph>,
    cache: Option<LayerCache>,
}

/// Plain LightGCN model with Xavier-initialized tables and two layers.
pub fn init_embeddings(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<EmbeddingModel> {
    let shape = ModelShape {
        dim,
        ..ModelShape::default()
    };
    EmbeddingModel::new(BackboneKind::Lightgcn, num_users, num_items, shape, &[], seed)
}

impl EmbeddingModel {
    pub fn new(
        kind: BackboneKind,
        num_users: usize,
        num_items: usize,
        shape: ModelShape,
        features: &[FeatureTable],
        seed: u64,
    ) -> Result<Self> {
        if shape.dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if kind.uses_features() && features.is_empty() {
            return Err(Error::invalid(format!("backbone `{kind}` needs at least one feature table")));
        }
        for table in features {
            table.expect_rows(num_items)?;
        }
        let mut rng = SplitMix64::derive(seed, "init");
        let d = shape.dim;
        let user = xavier_table(num_users, d, &mut rng);
        let item = xavier_table(num_items, d, &mut rng);
        let used: &[FeatureTable] = if kind.uses_features() { features } else { &[] };
        let proj = used.iter().map(|t| xavier_table(d, t.dim(), &mut rng)).collect();
        let pref = if kind == BackboneKind::Vbpr {
            used.iter().map(|_| xavier_table(num_users, d, &mut rng)).collect()
        } else {
            Vec::new()
        };
        let mut model = Self {
            kind,
            num_users,
            num_items,
            shape,
            params: Params {
                user,
                item,
                proj,
                pref,
            },
            modal: Vec::new(),
            item_graph: None,
            cache: None,
        };
        model.attach_features(used)?;
        Ok(model)
    }

    /// Replaces the modality inputs (rebuilding the item graph for the kNN
    /// backbone). Projection shapes must already match.
    pub fn attach_features(&mut self, features: &[FeatureTable]) -> Result<()> {
        if !self.kind.uses_features() {
            return Ok(());
        }
        if features.len() != self.params.proj.len() {
            return Err(Error::Shape(format!(
                "model has {} modalities, got {} feature tables",
                self.params.proj.len(),
                features.len()
            )));
        }
        for (table, proj) in features.iter().zip(&self.params.proj) {
            table.expect_rows(self.num_items)?;
            if proj.len() != self.shape.dim * table.dim() {
                return Err(Error::Shape(format!(
                    "projection for `{}` expects width {}, table has {}",
                    table.modality(),
                    proj.len() / self.shape.dim,
                    table.dim()
                )));
            }
        }
        let raw: Vec<ModalInput> = features
            .iter()
            .map(|t| ModalInput {
                tag: t.modality().to_owned(),
                dim: t.dim(),
                values: t.as_slice().iter().map(|&v| f64::from(v)).collect(),
            })
            .collect();
        if self.kind == BackboneKind::ModalityKnn {
            let graph = build_item_knn_graph(features, self.shape.knn_k)?;
            self.modal = raw
                .into_iter()
                .map(|m| ModalInput {
                    values: graph.spmm(&m.values, m.dim),
                    ..m
                })
                .collect();
            self.item_graph = Some(graph);
        } else {
            self.modal = raw;
        }
        self.cache = None;
        Ok(())
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn layers(&self) -> usize {
        self.shape.layers
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn modal_inputs(&self) -> &[ModalInput] {
        &self.modal
    }

    pub fn item_graph(&self) -> Option<&SparseRowGraph> {
        self.item_graph.as_ref()
    }

    pub fn cache(&self) -> Option<&LayerCache> {
        self.cache.as_ref()
    }

    pub fn set_layers(&mut self, layers: usize) {
        self.shape.layers = layers;
        self.cache = None;
    }

    /// Base embeddings of users then items, `(M + N) x d`.
    pub fn base_nodes(&self) -> Vec<f64> {
        let mut e0 = self.params.user.clone();
        e0.extend_from_slice(&self.params.item);
        e0
    }

    /// Refreshes the layer cache from the current parameters. VBPR caches
    /// its base embeddings so every kind can be scored afterwards.
    pub fn propagate(&mut self, graph: &SparseRowGraph) -> Result<&LayerCache> {
        let e0 = self.base_nodes();
        let cache = if self.kind.propagates() {
            if graph.num_rows() != self.num_users + self.num_items {
                return Err(Error::Shape(format!(
                    "graph has {} nodes, model has {}",
                    graph.num_rows(),
                    self.num_users + self.num_items
                )));
            }
            propagate(graph, &e0, self.shape.dim, self.shape.layers)
        } else {
            LayerCache {
                layers: vec![e0.clone()],
                mean: e0,
            }
        };
        self.cache = Some(cache);
        Ok(self.cache.as_ref().expect("just set"))
    }

    pub(crate) fn invalidate(&mut self) {
        self.cache = None;
    }

    /// Layer-averaged (or base, for VBPR) user and item embeddings.
    pub fn final_embeddings(&self) -> Result<(&[f64], &[f64])> {
        let cache = self.cache.as_ref().ok_or(Error::Unpropagated)?;
        Ok(cache.mean.split_at(self.num_users * self.shape.dim))
    }

    /// Per-modality projected item inputs `h_m = values_m W_m^T`, `N x d`.
    pub(crate) fn projected_items(&self, params: &Params) -> Vec<Vec<f64>> {
        let d = self.shape.dim;
        self.modal
            .iter()
            .zip(&params.proj)
            .map(|(input, w)| {
                let mut out = vec![0.0; self.num_items * d];
                for i in 0..self.num_items {
                    let f = &input.values[i * input.dim..(i + 1) * input.dim];
                    for r in 0..d {
                        let wr = &w[r * input.dim..(r + 1) * input.dim];
                        out[i * d + r] = crate::util::dot(wr, f);
                    }
                }
                out
            })
            .collect()
    }

    /// Flattens the model into per-user and per-item vectors whose dot
    /// product is the score.
    pub fn scoring_view(&self) -> Result<ScoringView> {
        let (users, items) = self.final_embeddings()?;
        let d = self.shape.dim;
        let projected = self.projected_items(&self.params);
        match self.kind {
            BackboneKind::Lightgcn => Ok(ScoringView {
                width: d,
                users: users.to_vec(),
                items: items.to_vec(),
            }),
            BackboneKind::ModalityKnn => {
                let mut item_vecs = items.to_vec();
                for h in &projected {
                    for (a, b) in item_vecs.iter_mut().zip(h) {
                        *a += b;
                    }
                }
                Ok(ScoringView {
                    width: d,
                    users: users.to_vec(),
                    items: item_vecs,
                })
            }
            BackboneKind::Vbpr => {
                let width = d * (1 + projected.len());
                let mut user_vecs = Vec::with_capacity(self.num_users * width);
                for u in 0..self.num_users {
                    user_vecs.extend_from_slice(&users[u * d..(u + 1) * d]);
                    for pref in &self.params.pref {
                        user_vecs.extend_from_slice(&pref[u * d..(u + 1) * d]);
                    }
                }
                let mut item_vecs = Vec::with_capacity(self.num_items * width);
                for i in 0..self.num_items {
                    item_vecs.extend_from_slice(&items[i * d..(i + 1) * d]);
                    for h in &projected {
                        item_vecs.extend_from_slice(&h[i * d..(i + 1) * d]);
                    }
                }
                Ok(ScoringView {
                    width,
                    users: user_vecs,
                    items: item_vecs,
                })
            }
        }
    }

    /// Scores for one user over `items`, or over all items when `None`.
    pub fn score(&self, user: usize, items: Option<&[usize]>) -> Result<Vec<f64>> {
        if user >= self.num_users {
            return Err(Error::invalid(format!("user {user} out of range")));
        }
        let view = self.scoring_view()?;
        Ok(match items {
            Some(list) => list.iter().map(|&i| view.score(user, i)).collect(),
            None => (0..self.num_items).map(|i| view.score(user, i)).collect(),
        })
    }
}

/// Frozen per-user and per-item vectors; `score(u, i) = <users[u], items[i]>`.
#[derive(Debug, Clone)]
pub struct ScoringView {
    pub width: usize,
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

impl ScoringView {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let w = self.width;
        crate::util::dot(&self.users[user * w..(user + 1) * w], &self.items[item * w..(item + 1) * w])
    }

    pub fn num_items(&self) -> usize {
        self.items.len() / self.width
    }
}
