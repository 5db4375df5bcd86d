//! File formats, episode loading, checkpoints and pipeline drivers around
//! [`spcor_core`]. The `spcor` binary is a thin clap front end over
//! [`pipeline`].

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod featstore;
pub mod gradcheck;
pub mod pipeline;
pub mod selection;

pub use error::{SpcorError, SpcorResult};
