//! Log-filterbank spectrograms and the convolutional feature extractor.

mod extractor;
mod spectrogram;

pub use extractor::{frontend_forward, frontend_vars, FrontendConfig, FrontendParams, FrontendVars, FrontendWeights};
pub(crate) use extractor::fan_in_uniform;
pub use spectrogram::{compute_logspec, Filterbank, SpectrogramConfig, StemSpectrogram, STEM_NAMES};
