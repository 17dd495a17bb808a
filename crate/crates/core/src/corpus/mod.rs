//! Interaction data, splits, item feature tables and the synthetic benchmark.

mod features;
mod interactions;
mod synth;

pub use features::{load_features, save_features, save_features_csv, FeatureTable};
pub(crate) use features::{read_mmf1_block, write_mmf1_block};
pub use interactions::{
    core_pairs, ingest_interactions, split_dataset, Edge, Ingested, InteractionSet, SplitDataset, SplitRatios,
};
pub use synth::{sample_weighted_distinct, synth_generate, SynthData, SynthSpec, SynthTruth};
