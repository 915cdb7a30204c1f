//! Simulation core for roadside reflecting-panel assisted vehicular links.

// `!(x > 0.0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod capacity;
pub mod channel;
pub mod dgv;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod objective;
pub mod output;
pub mod propagation;
pub mod rct;
pub mod scenario;
pub mod sim;
pub mod snapshot;

pub use error::{Result, RetfError};
