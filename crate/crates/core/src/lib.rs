//! Synthetic tabular data via a small causal language model.
//!
//! Rows are rendered as permuted `"<feature> is <value>, "` clauses, a byte-level
//! BPE vocabulary and a decoder-only transformer are trained on that corpus, and
//! new rows are sampled (optionally conditioned on any subset of features) and
//! parsed back into the source schema. The [`eval`] module scores synthetic
//! tables against real ones.

// positivity checks are written `!(x > 0.0)` so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod codec;
pub mod density;
pub mod eval;
pub mod gmm;
pub mod lm;
pub mod rng;
pub mod sampler;
pub mod table;
pub mod tokenizer;

pub use codec::{Clause, EncodedRecord, InvalidReason, ParseOutcome, Permutation};
pub use lm::{Checkpoint, LmConfig, LmParams, TrainConfig};
pub use sampler::{FeatureDensity, SampleMode, SampleReport, SampleSpec};
pub use table::{FeatureKind, Row, Schema, Table};
pub use tokenizer::{TokenSequence, Vocabulary};
