// `!(x > y)` guards also reject NaN parameters.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambient;
pub mod cli;
pub mod error;
pub mod fourier;
pub mod geomcore;
pub mod grid;
pub mod models;
pub mod operator;
pub mod reduction;

pub use error::{Error, Result};
