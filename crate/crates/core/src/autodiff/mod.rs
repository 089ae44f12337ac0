//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, ParamStore, CHECKPOINT_MAGIC};
pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
