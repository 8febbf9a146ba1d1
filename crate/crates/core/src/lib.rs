//! Deep Q-network engine for deciding whether, which, and where to insert an
//! ad into a list of recommendations.

pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod qnet;
pub mod replay;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
