//! The flow model: soft-clamped combining coupling layers, invertible
//! normalization, invertible linear mixing, block composition, exact
//! log-likelihood, and bidirectional evaluation (the normalizing data→latent
//! pass trains the model; the generating latent→data pass samples from it).

pub mod checkpoint;
pub mod clamp;
pub mod coupling;
pub mod linear;
pub mod model;
pub mod net;
pub mod norm;

use serde::{Deserialize, Serialize};

pub use clamp::{soft_clamp, ClampConfig};
pub use coupling::{coupling_generate, coupling_normalize, CouplingPair};
pub use linear::{linear_generate, linear_normalize, LinearFactor};
pub use model::{FlowBlock, FlowModel, ModelConfig};
pub use norm::{norm_generate, norm_normalize, NormState};

/// Whether normalization layers use batch statistics (training) or frozen
/// running estimates (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}
