//! Tensor kernels, reverse-mode gradients and a finite-difference oracle.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, relative_error, Coordinates, GradCheckOptions, GradCheckReport, ParamCheck,
};
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::{leaky_relu, max_pool_seq, softmax, Tensor};
