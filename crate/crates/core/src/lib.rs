//! VAE-based DoS/DDoS flow detectors: a latent-layer classifier trained jointly
//! with the VAE, and a two-stage detector that scores reconstruction loss of a
//! benign-only VAE.

pub mod checkpoint;
pub mod classifiers;
pub mod data;
pub mod error;
pub mod gate;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod preset;
pub mod rng;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Tensor;
