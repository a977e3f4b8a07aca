//! Forward-backward successor representations trained on reward-free
//! offline data, with test-time latent adaptation through a stationary
//! density-ratio correction.

pub mod adapt;
pub mod cli;
pub mod diffcore;
pub mod envs;
pub mod evalkit;
pub mod fbmodel;
pub mod mdporacle;

mod error;

pub use error::{Result, ZolError};
