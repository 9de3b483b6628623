//! Proof-of-authorship for latent diffusion outputs.

pub mod adjudicator;
pub mod cli;
pub mod error;
pub mod forger_lab;
pub mod generator;
mod hexser;
pub mod prf_seed;
pub mod stats;
pub mod transforms;

pub use error::{PoaError, Result};
