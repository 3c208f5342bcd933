//! Training, evaluation, ablation, and export driving the DTRN model crates,
//! shared between the `dtrn` binary and the integration tests.

pub mod ablation;
pub mod bundle;
pub mod error;
pub mod eval;
pub mod export;
pub mod metrics;
pub mod train;

pub use ablation::{run_suite, AblationReport, AblationRow, Suite, VariantSpec};
pub use bundle::{config_hash, load_bundle, meta_path, save_bundle, Bundle};
pub use error::CliError;
pub use eval::{evaluate, report_csv, score_dataset};
pub use export::{centroid_distance, export_csv, parse_export, ExportKind};
pub use metrics::{auc, auc_pairwise, logloss, TaskMetrics};
pub use train::{train, TrainConfig, TrainOutcome};
