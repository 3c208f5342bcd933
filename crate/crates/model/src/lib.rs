//! Multi-behavior multi-task ranking model: hypernetwork-conditioned
//! Transformer interest extraction, per-task representation refinement, and
//! pluggable multi-task prediction heads.

pub mod config;
pub mod dtrn;
pub mod embedding;
pub mod error;
pub mod heads;
pub mod hypernet;
mod init;
pub mod transformer;
pub mod trm;

pub use config::{HeadKind, ModelConfig, Site};
pub use dtrn::{Dtrn, ForwardOut};
pub use embedding::EmbeddingBank;
pub use error::ModelError;
pub use heads::MtlHead;
pub use hypernet::{Conditioning, HyperNet};
pub use transformer::{ConditionalTransformer, SeqInput};
pub use trm::Trm;
