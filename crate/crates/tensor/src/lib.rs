//! Reverse-mode tensor engine for small task-conditioned ranking models.
//!
//! Values are dense row-major tensors. Every differentiable operation runs
//! through a [`graph::Graph`] tape that records just enough to replay the
//! computation backwards; [`param::ParamStore`] owns the trainable state and
//! its Adam moments. The engine is generic over [`real::Real`] so production
//! models run in `f32` while gradient audits can instantiate `f64`.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod param;
pub mod real;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::TensorError;
pub use graph::{Graph, NodeId};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use rng::stream_rng;
pub use tensor::{layer_norm_stats, Tensor, LN_EPS};
