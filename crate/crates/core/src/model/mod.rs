//! The all-in-one network: front end, transformer modules, stem mean and
//! per-frame heads.

mod check;
mod config;
mod forward;
mod weights;

pub use check::{model_grad_check, MODEL_CHECK_EPS};
pub use config::{DropoutRates, ModelConfig, DEFAULT_LABELS};
pub use forward::{model_forward, model_logits, transformer_module_forward, FrameActivations, Logits};
pub use weights::{
    param_count, BlockParams, LinearParams, ModelParams, ModelTensors, ModelVars, ModelWeights, NormParams,
};
