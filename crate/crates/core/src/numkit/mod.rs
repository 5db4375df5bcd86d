//! Dense numerical kernels with hand-written backward passes.
//!
//! Everything here is generic over [`Real`] so the same code runs in `f32`
//! for the training pipeline and in `f64` for gradient checks and oracles.

mod adam;
mod gradcheck;
mod layers;
mod ops;
mod params;
mod real;
mod spectral;
mod tensor;

pub use adam::{AdamConfig, AdamState, StepReport};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{LayerNorm, LayerNormCache, LinearMap, Mlp, MlpCache};
pub use ops::{
    dot, l2_norm, log_softmax, mean_rows, sigmoid, softmax, softmax_backward, softplus,
};
pub(crate) use params::join;
pub use params::{flatten_params, load_flat_params, nudge_param, Parameters};
pub use real::Real;
pub use spectral::{column_dft_magnitudes, rfft_mag_sq};
pub use tensor::Tensor2;
