//! Multimodal recommendation under controlled corruption.
//!
//! The crate covers the whole experimental loop: ingesting and splitting
//! implicit-feedback data ([`corpus`]), injecting feature misalignment and
//! edge noise ([`corruptor`]), training collaborative-filtering backbones
//! ([`backbone`]), rectifying misaligned modality features offline
//! ([`rectifier`]), similarity-based edge editing ([`edge_editor`]),
//! full-ranking evaluation ([`evaluator`]) and config-driven sweeps
//! ([`harness`]).

pub mod backbone;
pub mod corpus;
pub mod corruptor;
pub mod edge_editor;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod rectifier;
pub mod rng;
pub mod util;

pub use error::{Error, Result};
