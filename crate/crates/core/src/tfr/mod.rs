//! Time-frequency representation: Symlet-6 continuous wavelet scalograms.

mod scalogram;
mod wavelet;

pub use scalogram::{normalize_tf, scalogram, NormalizeMode, ScalogramPlan, ScalogramSpec, TfMatrix};
pub use wavelet::{build_wavelet_bank, quadrature_mirror, symlet_filter, WaveletBank, SYM6_MOMENTS, SYM6_TAPS};
