pub mod baselines;
pub mod datagen;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod heads;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod rng;

pub use error::{Error, Result};
