//! Adaptive-depth text classification with a single parameter-shared
//! transformer encoder.
//!
//! The encoder block is applied repeatedly to the hidden state; after every
//! application a shared classifier produces a class distribution, and a
//! two-stage confidence-window policy decides whether the sample may stop
//! early. Because every iteration reuses the same weights, samples at
//! different depths can share one batched encoder call, which is what the
//! slot-refill scheduler in [`scheduler`] exploits.
//!
//! Layout:
//! - [`numerics`]: dense matrices, reverse-mode tape, gradient checking
//! - [`model`]: configuration, parameters, weight files, forward passes
//! - [`exit_policy`]: puzzlement (normalized entropy) and window criteria
//! - [`training`]: multi-exit loss with learned exit weights, Adam loop
//! - [`scheduler`]: execution strategies, step logs, latency cost model
//! - [`harness`]: datasets, preprocessing, sweeps, attention export, CLI

pub mod error;
pub mod exit_policy;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod scheduler;
pub mod training;

pub use error::{Error, Result};
pub use exit_policy::{cwb_decide, puzzlement, Criterion, ExitDecision, ExitPolicy, ExitStage, Window};
pub use model::{LayerTrace, Model, ModelConfig, Parameters, TokenSequence};
pub use numerics::Matrix;
