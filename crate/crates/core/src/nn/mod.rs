//! Layer engine: forward/backward passes, gradient checking, optimiser and
//! checkpoint files.

mod checkpoint;
mod gradcheck;
pub mod layer;
mod model;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layer::{valid_len, Activation, LayerKind, LayerSpec};
pub use model::{conv_valid_forward, maxpool_backward, maxpool_forward, Model, ModelSpec, ParamSet, Reduction};
pub use optim::{AdamConfig, OptimizerState};
pub use tensor::{Shape, Tensor4};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("stage {stage}: {reason}")]
    InvalidLayer { stage: usize, reason: String },
    #[error("stage {stage}: expected {expected}, found {found}")]
    ShapeMismatch { stage: usize, expected: String, found: String },
    #[error("stage {stage}: kernel {kernel:?} does not fit input {input:?}")]
    KernelTooLarge { stage: usize, kernel: (usize, usize), input: (usize, usize) },
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("{labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("parameter or gradient shapes disagree")]
    ParamShapeMismatch,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        NnError::Io(e.to_string())
    }
}
