use serde::{Deserialize, Serialize};

use super::{check_same_schema, EvalError, Result};
use crate::gmm::{fit, FitOptions};
use crate::table::{parse_decimal, FeatureKind, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodResult {
    /// Synthetic rows under a mixture fitted to the real training rows.
    pub l_syn: f64,
    /// Real test rows under a mixture fitted to the synthetic rows.
    pub l_test: f64,
    pub components: usize,
}

/// Rows as a flat point array; rows with a missing cell are skipped.
fn points(table: &Table) -> Vec<f64> {
    table
        .rows
        .iter()
        .filter(|r| r.missing_count() == 0)
        .flat_map(|r| r.cells.iter().map(|c| parse_decimal(c).expect("validated numeric cell")))
        .collect()
}

/// Full-covariance mixtures with a 1e-6 diagonal floor, fitted by EM with the
/// same seed on both sides, so passing one table three times gives
/// `l_syn == l_test` exactly.
pub fn likelihood_fitness(
    real_train: &Table,
    real_test: &Table,
    synthetic: &Table,
    n_components: usize,
    seed: u64,
) -> Result<LikelihoodResult> {
    check_same_schema(&[real_train, real_test, synthetic])?;
    if let Some(f) = real_train.schema.features.iter().find(|f| f.kind == FeatureKind::Categorical) {
        return Err(EvalError::NonNumericSchema(f.name.clone()));
    }
    let dim = real_train.schema.len();
    let opts = FitOptions { components: n_components, var_floor: 1e-6, seed, ..FitOptions::default() };
    let (train, test, syn) = (points(real_train), points(real_test), points(synthetic));
    for (what, p) in [("real train", &train), ("real test", &test), ("synthetic", &syn)] {
        if p.is_empty() {
            return Err(EvalError::TooFewRows { what, found: 0, needed: 1 });
        }
    }
    let on_real = fit(&train, dim, &opts)?.gmm;
    let on_syn = fit(&syn, dim, &opts)?.gmm;
    Ok(LikelihoodResult {
        l_syn: on_real.mean_log_likelihood(&syn)?,
        l_test: on_syn.mean_log_likelihood(&test)?,
        components: n_components,
    })
}
