#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod plant;
pub mod signals;
pub mod sysid;

pub use error::{Error, Result};
