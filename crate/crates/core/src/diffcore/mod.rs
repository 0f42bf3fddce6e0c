//! Small differentiable kernel: dense arrays, the handful of forward ops the
//! model uses, and their analytic backward passes.

mod array;
pub mod fd;
pub mod ops;
mod params;

pub use array::{axpy, dot, norm, Array2};
pub use ops::*;
pub use params::{Param, ParamId, ParamStore};
