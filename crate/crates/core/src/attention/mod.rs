//! Neighborhood attention: dilated 1D windows over time and 2D windows over
//! the instrument × time grid, with a dense masked-attention oracle.

mod layer;
mod neighborhood;
mod oracle;
mod window;

pub use layer::{attend, na1d, na2d, AttentionConfig, AttentionKind, AttentionParams, AttentionVars, AttentionWeights};
pub use neighborhood::Neighborhood;
pub use oracle::{full_attention_oracle, BiasLayout};
pub use window::{neighborhood_window_1d, receptive_field};

#[cfg(test)]
mod tests;
