//! Host-side tooling for the qforce engine: gridworld, float oracle,
//! training, quantization, file formats, rollouts and the `qfrl` CLI.

pub mod cli;
pub mod env;
pub mod error;
pub mod formats;
pub mod oracle;
pub mod quant;
pub mod report;
pub mod rollout;
pub mod train;
pub mod verify;

pub use error::{HarnessError, Result};
