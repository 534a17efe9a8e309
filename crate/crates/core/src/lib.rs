//! Simulation and recovery of unknown DCT-coefficient sign bits in
//! blockwise-DCT grayscale images.
//!
//! The crate models the attacker's view of a selectively encrypted image:
//! coefficient magnitudes (or magnitude-category codes) are public while
//! sign bits are missing. Recovery minimizes the sum of absolute
//! differences between neighboring pixels, either through a relaxed LP with
//! sign extraction or through region-wise MILPs followed by a global
//! brightness alignment, with naive error-concealment baselines for
//! comparison.

pub mod codec;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod recovery;
pub mod solver;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
