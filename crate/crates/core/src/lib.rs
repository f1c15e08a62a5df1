//! Micro-level claims reserving.
//!
//! Claim-level OCL estimation is posed as a Markov decision process and
//! solved with soft actor-critic. A weighted-MSE feed-forward network and an
//! IBNR-stripped chain ladder serve as benchmarks, evaluated under
//! leakage-safe rolling settlement validation.

pub mod chain_ladder;
pub mod claims;
pub mod env;
pub mod error;
pub mod eval;
pub mod fnn;
pub mod golden;
pub mod init;
pub mod nn;
pub mod pipeline;
pub mod sac;
pub mod sim;

pub use error::{Error, Result};
