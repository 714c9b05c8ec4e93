//! Dense tensors, reverse-mode differentiation, initialization and seeded
//! randomness.

mod finite_diff;
mod init;
pub mod ops;
mod rng;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff_grad, relative_error, GRAD_REL_FLOOR};
pub use init::{init_params, uniform, InitScheme};
pub use ops::{layer_norm_rows, matmul, softmax_rows};
pub use rng::RngState;
pub use tape::{Gradients, Graph, Var};
pub use tensor::Tensor;
