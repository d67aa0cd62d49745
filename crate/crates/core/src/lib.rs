// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bpe;
pub mod corpus;
pub mod error;
pub mod model;
pub mod numerics;
pub mod shiftmetrics;
pub mod trainer;

pub use error::{Error, Result};
