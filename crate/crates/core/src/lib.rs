//! Straggler-tolerant distributed learning with 1-bit gradient coding.
//!
//! The crate simulates a synchronous system of `n` workers that hold
//! redundant copies of the training samples. In every iteration each
//! non-straggling worker forms a weighted sum of its local gradients,
//! compresses it to one sign bit per coordinate plus a norm, and
//! broadcasts the result. The aggregated vector is an unbiased estimate of
//! the full gradient.
//!
//! Module map:
//!
//! - [`losses`]: loss models, per-sample gradients, synthetic data.
//! - [`distribution`]: replication of samples onto workers.
//! - [`quantization`]: random 1-bit quantizer, payload codec, bit accounting.
//! - [`simulation`]: the learning loop, baselines and learning-rate schedules.
//! - [`theory`]: closed-form moments and convergence bounds.
//! - [`config`], [`idx`], [`experiment`]: experiment description, dataset
//!   ingestion and CSV output used by the `onebit-gc` binary.
//! - [`verify`]: self-contained oracle checks exposed through `onebit-gc verify`.

pub mod config;
pub mod distribution;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod losses;
pub mod quantization;
pub mod rng;
pub mod simulation;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
