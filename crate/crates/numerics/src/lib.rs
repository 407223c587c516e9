//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! Small by intent: row-major `f64` storage, the handful of operations an
//! attention model needs, an Adam optimizer, a binary parameter container
//! and a finite-difference checker.

pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod gumbel;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use attention::{attend_heads, multi_head_attention, split_heads, MhaWeights};
pub use checkpoint::Checkpoint;
pub use error::{NumericsError, Result};
pub use gumbel::{gumbel, gumbel_noise, gumbel_softmax, gumbel_softmax_sample};
pub use optim::Adam;
pub use params::{GradStore, ParamId, ParamStore};
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::{softmax_row, Tensor};
