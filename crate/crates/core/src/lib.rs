// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod image;
pub mod linalg;
pub mod model;
pub mod par;
pub mod recursive;
pub mod search;
pub mod types;

pub use error::{Error, Result};
pub use types::{CMatrix, ProblemInstance, SparseSignal, SupportSet, C64};
