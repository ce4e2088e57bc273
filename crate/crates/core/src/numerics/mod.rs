//! Dense `f64` arrays with a reverse-mode tape.

mod array;
mod grad_check;
mod tape;

pub use array::Array;
pub use grad_check::{
    grad_check, max_relative_error, numerical_gradient, relative_error, DEFAULT_STEP, GRADIENT_SCALE_FLOOR,
};
pub use tape::{log_sigmoid, logistic, logsumexp_slice, CustomOp, Gradients, Tape, Var, LAYER_NORM_EPS};
