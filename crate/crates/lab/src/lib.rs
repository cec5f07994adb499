//! File formats, configs and the experiment runner behind the `amprob` binary.

pub mod checkpoint;
pub mod commands;
pub mod data;
pub mod error;
pub mod runner;

pub use error::{LabError, Result};
