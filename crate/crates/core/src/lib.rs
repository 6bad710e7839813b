//! Meta-learned latent-action policies for puck striking under randomized
//! friction: simulator, trajectory VAE, policy, adaptation and meta-training.

pub mod adaptation;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod meta;
pub mod physics;
pub mod policy;
pub mod spline;
pub mod stats;
pub mod trajectory;
pub mod vae;
pub mod vec2;
pub mod verify;

pub use error::{Error, Result};
