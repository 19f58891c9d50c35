//! Position-encoded auto-decoder: one latent per shape, a shared MLP from
//! `(z, gamma(p))` to signed distance, and mesh extraction from the field.

pub mod decoder;
pub mod encoding;
pub mod project;
pub mod train;

pub use decoder::{clamped_l1, Decoder, DecoderConfig};
pub use encoding::{position_features, positional_encode};
pub use project::{project_latents, Projection};
pub use train::{decoder_grid, infer_latent, reconstruct, train_autodecoder, InferConfig, SdfModel, SdfTrainConfig};
