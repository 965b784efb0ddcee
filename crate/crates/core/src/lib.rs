//! MR fingerprinting toolkit: FISP-style signal simulation, dictionary
//! template matching, and small from-scratch neural networks for T1/T2
//! regression.

pub mod dict;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
