//! Monocular depth estimation with a dilated residual feature extractor and
//! an attention-fused depth decoder, plus the training, evaluation, and
//! depth-application pipeline around it.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Backend, ConvSpec, Eager, Gradients, Graph, Padding, Real, Tensor, Var};
