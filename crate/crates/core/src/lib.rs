//! Individual identification from magnetocardiography (MCG) signals.
//!
//! The pipeline runs synthetic recording generation on a chest grid
//! ([`siggen`]), powerline denoising ([`denoise`]), Symlet-6 scalograms
//! ([`tfr`]), 2x2-window dataset assembly ([`dataset`]), a dense-block /
//! squeeze-excitation CNN written from scratch ([`nn`]), metrics ([`eval`])
//! and a time-frequency-domain noise robustness sweep ([`robustness`]).
//!
//! Numeric kernels are generic over [`Real`]; the aliases below fix the
//! precision used by the pipeline (`f32` for training, `f64` for checks).

pub mod archive;
pub mod container;
pub mod dataset;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod nn;
pub mod num;
pub mod robustness;
pub mod rng;
pub mod siggen;
pub mod tfr;

pub use error::{Error, Result};
pub use num::Real;

pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
