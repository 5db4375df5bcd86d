//! Query-guided spectral frame sampling, reliability-weighted multi-robot
//! belief fusion and prompt-space distillation.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds without `std`. File formats, manifests and the command line live in
//! the companion `spcor` crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod distill;
mod error;
pub mod fusion;
pub mod numkit;
pub mod privileged;
pub mod rng;
pub mod sampler;
pub mod stream;
pub mod synth;

pub use crate::error::{Error, Result};
pub use crate::numkit::{Real, Tensor2};
