//! Self-supervised joint recovery of the initial pressure and the speed law
//! in photoacoustic tomography.
//!
//! The crate is organised around the training loop's closed cycle:
//! boundary data → reconstruction network → mapping network → k-space wave
//! simulator → boundary data.
//!
//! - [`phantom`]: Shepp-Logan-family phantoms and seeded datasets.
//! - [`kspace`]: differentiable k-space forward operator.
//! - [`diff`]: reverse-mode tape, layers, Adam, checkpoints.
//! - [`models`]: reconstruction and mapping networks.
//! - [`trainer`]: self-supervised loss, training loop, metrics.

pub mod diff;
pub mod error;
pub mod kspace;
pub mod models;
pub mod phantom;
pub mod scalar;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;
