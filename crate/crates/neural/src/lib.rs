//! Minimal tensor engine: eager ops recorded on a tape for reverse-mode
//! differentiation, the layer set needed by the model tables (Conv2d,
//! Linear, BatchNorm, LayerNorm, ReLU), Adam, and finite-difference
//! gradient checking.
//!
//! The engine is generic over the element type: training runs in f32,
//! gradient checks run the same graphs in f64.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;

pub use adam::{adam_update, lr_schedule, Adam, DECAY_EPOCHS, INITIAL_LR};
pub use graph::{Graph, Real, Var};
pub use layers::{Layer, LayerSpec, Mode, ParamBinding, ParamKind, Stack};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch{}: {msg}", at.as_ref().map(|a| format!(" in {a}")).unwrap_or_default())]
    ShapeMismatch { at: Option<String>, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Misuse of the tape: backward twice, backward on a detached
    /// tensor, or querying a gradient that was never produced.
    #[error("autodiff usage error: {0}")]
    Usage(String),

    /// Numerical failure during optimization.
    #[error("training error: {0}")]
    Training(String),
}

impl NeuralError {
    pub fn shape(msg: impl Into<String>) -> Self {
        NeuralError::ShapeMismatch { at: None, msg: msg.into() }
    }

    pub fn shape_at(at: impl Into<String>, msg: impl Into<String>) -> Self {
        NeuralError::ShapeMismatch { at: Some(at.into()), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, NeuralError>;
