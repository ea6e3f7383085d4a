//! Physics-informed head impact detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`signals`]: event windows, resampling, differentiation, event files.
//! - [`sim`]: lumped head-neck-impactor surrogate that produces synthetic
//!   true-impact kinematics over a sweep of impact configurations.
//! - [`dataset`]: labelled events, splits, time-shift augmentation,
//!   balancing and training-strategy assembly.
//! - [`nnet`]: the convolutional detector with hand-written backpropagation.
//! - [`metrics`]: confusion counts, PPV/NPV, F-beta, workflow comparison.
//! - [`experiment`]: benchmark generation, strategy sweeps and reporting.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod nnet;
pub mod metrics;
pub mod signals;
pub mod sim;

pub use error::{Error, Result};
