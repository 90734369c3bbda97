//! Deterministic simulator for federated averaging of over-parameterized
//! two-layer ReLU networks in the neural tangent kernel regime, plus the
//! audit machinery that checks recorded trajectories against the closed-form
//! convergence and generalization bounds.
//!
//! The crate is `no_std` (it needs `alloc`). File formats and the command
//! line live in the `fl-ntk` companion crate.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod kernel;
pub mod model;
pub mod numerics;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
