//! Reverse-mode automatic differentiation over small dense `f64` arrays.
//!
//! Computations are recorded on a [`Tape`]; gradients are computed by
//! replaying it backwards. Because backward rules are themselves recorded,
//! gradients can be differentiated again, which [`functional_update`] relies
//! on to keep a parameter update inside the graph.

mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use nn::{forward_mlp, gaussian_log_density, DiagonalGaussian, MlpSpec, LN_2PI};
pub use optim::{sgd_step, Adam};
pub use params::{functional_update, ParamSet, ParamVars};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
