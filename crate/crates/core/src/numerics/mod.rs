//! Dense tensors, reverse-mode differentiation and the Adam update.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod init;
pub(crate) mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, Adam, AdamState};
pub use gradcheck::{finite_diff_check, Evaluated};
pub use init::glorot_uniform;
pub use ops::{affine, mse, sigmoid, sigmoid_forward, softmax_rows, sq_euclidean, tanh_forward};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
