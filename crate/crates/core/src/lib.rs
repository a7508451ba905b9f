//! Schrödinger Bridge training and one-step inference for a selective
//! state-space speech enhancer.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! a small reverse-mode autodiff tensor engine, the bridge schedule and
//! samplers, the selective scan, the Mamba backbone, STFT analysis and
//! synthesis, the data-prediction loss and AdamW, synthetic corpus
//! generation and the evaluation metrics. File formats, WAV IO and the
//! command line live in the `sbm` companion crate.
//!
//! Enable the default `std` feature for runtime CPU feature detection in
//! the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backbone;
pub mod bridge;
pub mod data;
pub mod enhance;
mod error;
pub mod loss;
pub mod metrics;
pub mod optim;
mod real;
pub mod rng;
pub mod signal;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use tensor::{ParamId, ParamStore, Tape, Tensor, Var};
