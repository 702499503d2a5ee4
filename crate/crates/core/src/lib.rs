pub mod atlas;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod estimator;
pub mod evodpo;
pub mod fmt;
pub mod numerics;
pub mod policy;
pub mod regret;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
