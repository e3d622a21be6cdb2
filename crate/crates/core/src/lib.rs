//! Population-based training of maximum-entropy actor-critic learners whose
//! hyperparameters (update ratios, target entropy, action persistence and
//! discount) are evolved online, plus the SAC-family baselines and an
//! experiment harness.

pub mod agent;
pub mod baselines;
pub mod envs;
pub mod error;
pub mod eval;
pub mod evolution;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
