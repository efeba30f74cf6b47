//! Orchestration: run configuration, datasets and file formats, collection runs with borrowing,
//! and amortized inference.

mod collection;
mod config;
mod dataset;
pub mod io;

pub use collection::{
    amortized_infer, run_collection, target_distance_matrix, with_threads, AmortizedResult, BankEntry, CollectionRun, TargetRun,
    TrainingBank,
};
pub use config::{RunConfig, RUN_CONFIG_SCHEMA_VERSION};
pub use dataset::{ingest, load_bundle, load_query, save_bundle, Dataset, IngestConfig, IngestInputs, Split, TargetEntry, DATASET_SCHEMA_VERSION};
