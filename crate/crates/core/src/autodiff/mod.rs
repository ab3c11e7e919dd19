//! Minimal reverse-mode differentiation: dense tensors, a recording tape,
//! named parameter storage and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_scaled, relative_error, GradcheckReport, MAGNITUDE_FLOOR, STEP};
pub use params::{ParamId, Parameter, ParameterStore};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::{Precision, Scalar, Tensor};
