//! Small illumination-guided conditional denoiser.
//!
//! The latent and the degraded condition are stacked along channels and run
//! through a two-scale conv encoder/decoder. An illumination pyramid is
//! injected at both scales by cross-attention (queries from illumination
//! features, keys and values from backbone features). Gradients are written
//! out by hand.

pub mod attention;
pub mod layers;
mod model;
mod serialize;
mod train;

pub use attention::{cross_attention, flatten_spatial, unflatten_spatial, Tokens};
pub use model::{Architecture, Layout, TinyDenoiser, COND_CHANNELS, LATENT_CHANNELS};
pub use serialize::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MAGIC};
pub use train::{
    loss_endpoints, loss_gradient, smoothed, train_toy, LossItem, TrainConfig, TrainOutcome, TrainingTriple,
    MIN_TRAINING_TRIPLES, SMOOTHING_WINDOW, TOY_PATCH,
};

/// Width used for gradient checks: under 500 parameters.
pub const GRADCHECK_ARCH: Architecture = Architecture { base: 2, deep: 2, time_dim: 4 };
