#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod cli;
pub mod error;
pub mod eval;
pub mod fcdata;
pub mod linalg;
pub mod lrp;
pub mod nn;
pub mod roiselect;
pub mod sae;

pub use error::{Error, Result};
