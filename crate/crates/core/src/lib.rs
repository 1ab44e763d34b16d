//! Momentum residual networks with exact inversion and reversible backprop.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod loss;
pub mod memprofile;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod momentum;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
