//! Scores for synthetic tables: ML efficiency, distance to closest record,
//! discriminator accuracy and Gaussian-mixture likelihood fitness.

mod dcr;
mod design;
mod discriminator;
mod histogram;
mod likelihood;
pub mod linear;
pub mod metrics;
mod mle;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::GmmError;
use crate::table::{Table, TableError};

pub use dcr::{dcr, dcr_histogram, dcr_parallel, DcrResult};
pub use design::{Encoder, Matrix};
pub use discriminator::{discriminator, DiscriminatorOptions, DiscriminatorResult, MIN_ROWS as DISCRIMINATOR_MIN_ROWS};
pub use histogram::{joint_histogram, JointHistogram};
pub use likelihood::{likelihood_fitness, LikelihoodResult};
pub use mle::{mle, MleComparison, MleOptions, MleResult, ModelScores};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("tables do not share one schema")]
    SchemaMismatch,
    #[error("{found} rows where at least {needed} are needed ({what})")]
    TooFewRows { what: &'static str, found: usize, needed: usize },
    #[error("target '{0}' takes a single value in the training data")]
    SingleClassTarget(String),
    #[error("likelihood fitness needs an all-numeric schema; '{0}' is categorical")]
    NonNumericSchema(String),
    #[error("feature '{0}' is not numeric")]
    NonNumericFeature(String),
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("mixture fit failed: {0}")]
    EmDegenerate(#[from] GmmError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mean and sample standard deviation of per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MetricSummary { mean, std, values }
    }
}

pub(crate) fn check_same_schema(tables: &[&Table]) -> Result<()> {
    let first = &tables[0].schema;
    if tables.iter().all(|t| t.schema.same_layout(first)) {
        Ok(())
    } else {
        Err(EvalError::SchemaMismatch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

/// The JSON bundle written by the `evaluate` command; absent metrics are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mle: Option<MleComparison>,
    pub dcr: Option<DcrResult>,
    pub discriminator: Option<DiscriminatorResult>,
    pub likelihood: Option<LikelihoodResult>,
    pub meta: EvalMeta,
}
