//! Dense numeric kernel: tensors, MLPs with explicit backprop, Adam, and a
//! finite-difference gradient oracle.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod mlp;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::TensorBundle;
pub use gradcheck::{finite_diff_check, numeric_partial, FD_STEP};
pub use mlp::{Activation, Layer, LayerGrads, Mlp, MlpGrads, Tape};
pub use scalar::Scalar;
pub use tensor::Tensor;
