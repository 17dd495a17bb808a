//! Collaborative-filtering backbones and their BPR trainer.

mod adam;
mod bpr;
mod checkpoint;
mod graph;
mod model;
mod train;

pub use adam::Adam;
pub use bpr::{bpr_loss, bpr_loss_and_grad, bpr_triplet_loss, Triplet};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{build_item_knn_graph, build_norm_adjacency, SparseRowGraph};
pub use model::{
    init_embeddings, propagate, xavier_table, BackboneKind, EmbeddingModel, LayerCache, ModalInput, ModelShape,
    Params, ScoringView,
};
pub use train::{train, train_with, EarlyStopping, EpochRecord, Progress, TrainConfig, TrainHistory};
