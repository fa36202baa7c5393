//! View-adaptive networks for skeleton-based action recognition.

// `!(x > 0.0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod geometry;
pub mod models;
pub mod nn;
pub mod oracles;
pub mod skeleton;

pub use error::{Error, ErrorCategory, Result};
