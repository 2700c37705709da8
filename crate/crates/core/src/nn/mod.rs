//! Minimal differentiable primitives for the CTG model.
//!
//! Two numeric modes share one implementation through [`Real`]: `f32` for
//! training and `f64` for finite-difference verification.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use graph::{AttnMask, Graph, Var};
pub use layers::{ConvResidualBlock, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tensor::Real;
