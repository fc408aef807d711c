//! Dense double-precision kernels with hand-derived backward passes.

mod gradcheck;
mod matrix;
mod ops;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{axpy, dot, Matrix};
pub use ops::{
    layer_norm, layer_norm_backward, logistic, neg_log_sigmoid, softmax_in_place,
    softmax_row_backward, softmax_rows, softmax_rows_backward, LayerNormCache,
};
pub use tape::{accumulate_all, ParamSet, ParamTape};
