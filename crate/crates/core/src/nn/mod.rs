//! Feed-forward networks, the Adam optimizer, and the squashed-Gaussian policy head.

mod adam;
mod gaussian;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{
    GaussianHead, SquashedBatch, SquashedSample, LOG_STD_MAX, LOG_STD_MIN, SQUASH_EPS,
};
pub use mlp::{ForwardCache, Mlp, MlpGrads};
