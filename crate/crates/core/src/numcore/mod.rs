//! Dense linear algebra and reverse-mode differentiation for small ReLU networks.

mod chain;
mod matrix;
mod tape;

pub use chain::{
    activation_masks, bias_id, check_chain, forward, forward_batch, grad_of_input_grad_norm,
    input_gradient, record_forward, record_input_gradients, weight_id, Affine,
};
pub(crate) use chain::forward_batch_scaled;
pub use matrix::{gemm, relu, DenseMatrix, DenseVector, Trans};
pub(crate) use matrix::gemm_acc;
pub use tape::{GradTape, Gradients, ParamId, Var};
