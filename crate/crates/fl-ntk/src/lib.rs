//! File formats, run configuration and batch commands for the `fl-ntk`
//! simulator. The numerical work lives in `fl-ntk-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, Result};
