#![no_std]
// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod decoder;
pub mod descriptor;
pub mod egnn;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod lrft;
pub mod matcher;
pub mod nn;
pub mod objective;
pub mod pipeline;

pub use error::{Error, Result};
