//! Simulation of a two-user Z-interference channel with conventional QAM
//! baselines and a learned autoencoder transceiver.

pub mod ablation;
pub mod channel;
pub mod config;
pub mod daezic;
pub mod error;
pub mod eval;
pub mod model_io;
pub mod modem;
pub mod nn;
pub mod rng;

pub use error::{Result, ZicError};
