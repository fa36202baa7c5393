//! Dense tensors and a define-by-run reverse-mode differentiation tape.
//!
//! ```
//! use viewadapt_tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Networks default to `f32`; `f64` is available for tight gradient checks.

mod error;
mod gradcheck;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{
    grad_check, grad_check_many, numeric_gradient, relative_error, GradCheckReport,
};
pub use ops::conv::conv_out_len;
pub use ops::loss::softmax_rows;
pub use ops::norm::{BatchMoments, NormStats};
pub use scalar::{DType, Scalar};
pub use tape::{BackwardCtx, BackwardFn, Param, Tape, Var};
pub use tensor::{broadcast_shape, Tensor};
