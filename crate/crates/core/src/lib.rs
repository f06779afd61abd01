//! Screw-theoretic modeling, estimation and planning for manipulating
//! flexible attachments by wrench sensing alone.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cli;
pub mod env;
pub mod error;
pub mod explorer;
pub mod planner;
pub mod screw;
pub mod stiffness;

pub use error::{Error, Result};
