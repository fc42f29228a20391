//! Dense networks with hand-written reverse-mode gradients, Adam, and
//! diagonal-Gaussian math.

mod adam;
mod gaussian;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gaussian::{DiagGaussian, LogStdRange, HALF_LN_2PI};
pub use matrix::Matrix;
pub use mlp::{Activation, Linear, Mlp, ParamTensor, Parameterized};
