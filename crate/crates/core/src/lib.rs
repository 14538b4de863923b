//! Bit-exact software model of a quantized reinforcement-learning compute engine.
//!
//! The crate is `no_std` (with `alloc`) and contains only the arithmetic:
//!
//! * [`fxp`]: adaptive fixed-point quantization shared by every other module.
//! * [`qmac`]: the SIMD multi-precision multiply-accumulate unit built from
//!   sixteen 8×8 multiplier primitives, plus a Mitchell logarithmic multiplier.
//! * [`vact`]: CORDIC-based activation functions (ReLU, sigmoid, tanh, softmax).
//! * [`qnet`]: the quantized hierarchical policy network (Q-Conv, Q-FC, Q-LSTM).
//! * [`perf`]: the analytic cycle and throughput model.
//!
//! File formats, the CLI, the float oracle and the training harness live in the
//! `qforce-harness` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
pub mod fxp;
pub mod perf;
pub mod qmac;
pub mod qnet;
pub mod vact;

pub use error::{Error, Result};
pub use fxp::{Precision, QTensor, QuantParams};
