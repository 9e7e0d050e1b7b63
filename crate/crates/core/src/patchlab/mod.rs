//! Toy residual transformer and direct-effect path patching.

mod format;
mod model;
mod patch;
mod tokenizer;

pub use format::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use model::{softmax, ActivationCache, Block, Matrix, ModelConfig, ToyResidualModel};
pub use patch::{
    direct_effect, mean_curve, patched_logits_causal, patched_logits_direct, random_corruption,
    sweep_caches, sweep_layers, CorruptedPrompt, DeEntry, DirectEffectCurve, PatchMode,
    PatchSet, PositionPolicy, Readout,
};
pub use tokenizer::{pieces, Tokenizer, TOKENIZER_VERSION};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error("piece `{0}` is not a single vocabulary token")]
    UnknownPiece(String),
    #[error("empty input")]
    EmptyInput,
    #[error("layer {layer} out of range (model has {n_layers})")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("sequence lengths {clean} and {base} incompatible with position policy {policy}")]
    LengthMismatch {
        clean: usize,
        base: usize,
        policy: String,
    },
    #[error("trajectory span not found in prompt of {0}")]
    SpanNotFound(String),
    #[error("model format: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot average curves: {0}")]
    IncompatibleCurves(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
