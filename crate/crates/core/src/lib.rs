//! Auto-conditioned recurrent mixture-density state transition models for
//! learning planar-arm skills from demonstrations.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod arm;
pub mod commands;
pub mod config;
pub mod demos;
pub mod dense;
pub mod error;
pub mod eval;
pub mod idm;
pub mod lstm;
pub mod math;
pub mod mdn;
pub mod stm;
pub mod task;
pub mod trajopt;

pub use error::{Error, Result};
