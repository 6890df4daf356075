//! Dense `f64` matrix math, a reverse-mode tape, and finite-difference
//! gradient checking.

mod gradcheck;
mod matrix;
mod ops;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use matrix::{
    argmax, cross_entropy, gelu, layer_norm, masked_softmax_rows, matmul, sigmoid, softmax,
    softmax_rows, Matrix, PROB_FLOOR,
};
pub use ops::{Eval, Ops};
pub use tape::{Gradients, Tape, Var};

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-12;
