//! Train small MLP classifiers, unlearn a forget set with NegGrad, SCRUB or
//! SFTC, and audit the result with a shadow-model membership inference
//! attack.

pub mod data;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod mia;
pub mod nn;
pub mod unlearn;

pub use error::{Error, Result};
