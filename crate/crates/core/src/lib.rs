//! Ladder networks for semi-supervised classification.
//!
//! A fully connected encoder is run twice per batch, once clean and once with
//! Gaussian corruption after every batch normalization. A decoder with
//! lateral connections denoises each corrupted layer using top-down
//! information, and the network is trained on the sum of a supervised
//! cross-entropy and layer-wise denoising costs.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command line live in the companion `ladder` crate.
#![no_std]

extern crate alloc;

pub mod batchnorm;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod numerics;
pub mod objective;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
