//! Dataset layer: feature schema, instance storage, mini-batching, the
//! seeded synthetic-world generator, and sequence/target co-occurrence
//! statistics.
//!
//! File formats are deliberately plain: flat `key=value` text for schemas
//! and configs, one JSON object per line for datasets, CSV for reports.

mod error;
mod generator;
mod instance;
mod kv;
mod schema;
mod stats;

pub use error::DataError;
pub use generator::{generate, generate_split, GenerateOutput, GeneratorConfig, LatentWorld, Split};
pub use instance::{
    read_instances, validate_instances, write_instances, Instance, MiniBatch, SequenceBatch,
};
pub use kv::KvFile;
pub use schema::FeatureSchema;
pub use stats::{sequence_target_stats, stats_to_csv};
