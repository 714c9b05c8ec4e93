//! Multi-scale efficient graph-transformer for multiple-instance
//! classification of dual-resolution bags of feature vectors.

pub mod attention;
mod codec;
pub mod data;
pub mod egt;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;

pub use data::Bag;
pub use error::{MegtError, Result};
pub use metrics::EvalResult;
pub use model::{MegtModel, ModelConfig};
pub use numerics::{Graph, RngState, Tensor, Var};
pub use params::{ParamId, ParamStore};
