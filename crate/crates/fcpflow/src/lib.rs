//! Conditional normalizing flows for daily load profiles.
//!
//! Builds, trains, and evaluates FCPFlow models: stacks of invertible
//! blocks (running-statistics normalization, invertible linear mixing
//! across time steps, soft-clamped combining coupling layers) trained by
//! exact maximum likelihood, plus the two-sample and probabilistic-forecast
//! metrics used to score generated profiles.

pub mod array;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod train;

pub use array::Array2;
pub use error::{Error, Result};
pub use flow::{FlowModel, Mode, ModelConfig};
