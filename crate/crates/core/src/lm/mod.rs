//! Decoder-only transformer trained from scratch on encoded records.
//!
//! Pre-layer-norm GPT blocks with GELU feed-forward layers, learned absolute
//! position embeddings and (by default) an output projection tied to the token
//! embedding. Forward and backward passes are written out by hand over flat
//! buffers; matrix products go through `matrixmultiply`.

mod checkpoint;
mod decode;
mod model;
mod optim;
mod params;
pub mod scalar;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, Checkpoint, LogEntry, FORMAT_VERSION};
pub use decode::DecodeState;
pub use model::{forward, gradients, loss_and_gradients, nll, Batch};
pub use optim::AdamW;
pub use params::{LayerOffsets, Layout, LmParams, TensorInfo};
pub use train::{encode_corpus, train, train_with_observer, TrainEvent};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("sequence of {len} tokens exceeds the context of {max}{}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    ContextOverflow { len: usize, max: usize, row: Option<usize> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
    #[error(transparent)]
    Density(#[from] crate::density::DensityError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, LmError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub tie_embeddings: bool,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 512,
            context_len: 256,
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            dropout: 0.0,
            tie_embeddings: true,
            seed: 0,
        }
    }
}

impl LmConfig {
    /// One layer, one head, width 8, byte vocabulary.
    pub fn tiny() -> Self {
        LmConfig {
            vocab_size: crate::tokenizer::BASE_SIZE,
            context_len: 32,
            n_layers: 1,
            n_heads: 1,
            d_model: 8,
            d_ff: 32,
            ..LmConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LmError::InvalidConfig(m));
        if self.vocab_size < crate::tokenizer::BASE_SIZE {
            return bad(format!("vocab_size {} below the byte vocabulary", self.vocab_size));
        }
        if self.context_len < 2 || self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("context_len must be >= 2 and all widths/counts positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero over the planned number of steps.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip: Option<f64>,
    pub lr_schedule: LrSchedule,
    /// Fresh random clause order per record per epoch; off means schema order.
    pub permute: bool,
    /// Share of rows held out for validation-loss early stopping (0 disables it).
    pub validation_fraction: f64,
    pub patience: usize,
    pub pretrain_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 5e-5,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: Some(1.0),
            lr_schedule: LrSchedule::Linear,
            permute: true,
            validation_fraction: 0.0,
            patience: 3,
            pretrain_epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}
