//! Filesystem, configuration, training, and CLI plumbing around the core
//! engine: PGM/PNG IO, run configs, checkpoints, datasets, the training
//! loop, threshold sweeps, and the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imageio;
pub mod pgm;
pub mod sweep;
pub mod trainer;

pub use error::{CliError, Result};
