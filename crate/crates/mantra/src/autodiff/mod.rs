//! Minimal reverse-mode automatic differentiation: tensors, a Wengert-list
//! tape with the layer zoo (dense, GRU, 2D convolution, batch normalization,
//! sigmoid/tanh/ReLU, MSE) and a bias-corrected Adam optimizer.

pub mod adam;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use layers::{dense, gru_step, DenseParams, GruParams};
pub use tape::{ConvSpec, RunningStats, Tape, Var};
pub use tensor::{clip_joint_global_norm, Grads, ParamVec, Tensor};
