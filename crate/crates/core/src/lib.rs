//! Conditional-GAN multimodal embeddings for video hyperlinking.
//!
//! The crate trains a text-conditioned GAN (matching-aware discriminator,
//! three pair types) on paired speech-embedding / keyframe data and reads a
//! joint embedding out of the discriminator. Two reconstruction baselines
//! (a multimodal autoencoder and a bidirectional tied-weight network) are
//! trained on the same data and all three are compared under a cosine
//! ranking, precision-at-k protocol.
//!
//! Everything runs on a small reverse-mode autodiff engine in [`tensor`].
//! See the `examples/` directory for one runnable program per capability.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod models;
pub mod nn;
pub mod retrieval;
pub mod tensor;
pub mod training;
pub mod viz;

mod error;

pub use error::{Error, Result};
