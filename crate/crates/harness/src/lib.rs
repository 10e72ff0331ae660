//! Training, evaluation, file formats and the `emc` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod featfile;
pub mod optim;
pub mod train;

pub use error::{HarnessError, Result};
