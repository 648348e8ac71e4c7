//! File formats, parallel drivers, pipeline orchestration and the `apm`
//! command line on top of `apm-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod products;
pub mod synthetic;
pub mod tasks;

pub use apm_core as core;
pub use error::{AppError, Result};
