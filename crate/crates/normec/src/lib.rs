//! Simulation library for distributed gradient methods that transmit
//! normalized or clipped updates with client-side error compensation,
//! together with the oracle suite that checks their guarantees at desk scale.

pub mod algorithms;
pub mod error;
pub mod operators;
pub mod oracle;
pub mod privacy;
pub mod problems;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
pub use vector::Vector;
