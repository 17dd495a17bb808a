//! Offline rectification of misaligned modality features.
//!
//! Collaborative anchors from a LightGCN encoder serve as the trusted item
//! space. Each modality is projected into it with a linear map trained on
//! the smallest-loss part of every batch, anchors are matched against the
//! projected features through a sparse top-K affinity balanced by Sinkhorn
//! scaling, and each feature row is replaced by a mix of itself and the
//! matched aggregate.

mod affinity;
mod anchors;
mod pipeline;
mod projection;
mod rectify;
mod sinkhorn;

pub use affinity::{build_affinity, build_affinity_from_projected, SparseAffinity};
pub use anchors::{anchors_from_model, compute_anchors, AnchorConfig, AnchorTable, Anchors};
pub use pipeline::{
    rectify_pipeline, rectify_with_anchors, ModalityProvenance, Provenance, Rectified, RectifyConfig, RhoRule,
};
pub use projection::{
    cosine_loss_and_grad, kept_loss_and_grad, select_small_loss, train_projection, ProjectionConfig, Projector,
};
pub use rectify::rectify;
pub use sinkhorn::{marginal_deviation, row_normalize, sinkhorn, SinkhornConfig, SoftMatching};
