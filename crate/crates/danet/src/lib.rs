//! File formats, dataset tooling, training runs and the `danet` command line
//! on top of [`danet_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
