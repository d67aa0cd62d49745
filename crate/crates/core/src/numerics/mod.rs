//! Dense tensors, differentiable operations, gradients and the optimizer.

mod adam;
mod gradcheck;
mod graph;
pub mod kernels;
mod rng;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, Parameter};
pub use gradcheck::{finite_difference_check, RELATIVE_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{cross_entropy, gelu, layer_norm, matmul, matmul_bt, softmax_rows, LAYER_NORM_EPS};
pub use rng::{derive_seed, DetRng, RngState};
pub use tensor::{Real, Tensor};
