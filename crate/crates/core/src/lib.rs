#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod background;
pub mod cli;
pub mod error;
pub mod interactions;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod specfun;
pub mod transition;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
