//! Black-box modeling of nonlinear audio circuits with a conditioned
//! feedforward WaveNet.
//!
//! The crate covers the whole workflow: a synthetic reference "tube stage"
//! that produces training targets, differentiable layer primitives, the
//! WaveNet and MLP models, pre-emphasized ESR training with Adam, ring-buffer
//! streaming inference, and an ESR evaluation grid.

pub mod corpus;
pub mod error;
pub mod evalreport;
pub mod models;
pub mod nncore;
pub mod refdevice;
pub mod signal;
pub mod streaming;
pub mod training;

pub use error::{Error, Result};
pub use models::{Mlp, MlpConfig, Model, Network, WaveNet, WaveNetConfig};
pub use signal::AudioBuffer;
