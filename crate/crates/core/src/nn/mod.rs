//! Minimal differentiable tensor core: dense matrices, dense layers,
//! reverse-mode gradients and the Adam optimizer.

mod adam;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{forward_mlp, Activation, Bound, Mlp, MlpLayer, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
