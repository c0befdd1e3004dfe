//! Single-feature marginals used to draw the seed value in name-value
//! preconditioning.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{self, Component, FitOptions, Gmm, GmmError};
use crate::table::{FeatureKind, Table};

pub const MAX_COMPONENTS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("feature '{0}' has no observed values")]
    EmptyFeature(String),
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityEntry {
    /// Observed values with their relative frequencies, sorted by value.
    Categorical { frequencies: Vec<(String, f64)> },
    /// One-dimensional mixture; draws are clamped to `range` and printed with
    /// `decimals` fractional digits.
    Numeric { gmm: Gmm, range: (f64, f64), decimals: usize, degenerate: bool },
}

impl DensityEntry {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        match self {
            DensityEntry::Categorical { frequencies } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (value, p) in frequencies {
                    acc += p;
                    if u < acc {
                        return value.clone();
                    }
                }
                frequencies.last().map(|(v, _)| v.clone()).unwrap_or_default()
            }
            DensityEntry::Numeric { gmm, range, decimals, .. } => {
                let x = gmm.sample(rng)[0].clamp(range.0, range.1);
                format_number(x, *decimals)
            }
        }
    }
}

/// Fixed-point rendering without a negative sign on zero.
pub fn format_number(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn fraction_digits(value: &str) -> usize {
    let mantissa = value.split(['e', 'E']).next().unwrap_or(value);
    mantissa.split_once('.').map_or(0, |(_, f)| f.len())
}

/// Estimates the marginal of one feature over the table's non-missing cells.
///
/// Numeric features get an EM mixture with `n_components` components (reduced
/// to the number of distinct values if there are fewer). A feature with a
/// single distinct value gets one component whose variance is
/// `1e-9 * max(range², 1)` and is flagged `degenerate`.
pub fn fit_feature_density(
    table: &Table,
    feature: &str,
    n_components: usize,
    seed: u64,
) -> Result<DensityEntry, DensityError> {
    let j = table.schema.index_of(feature).ok_or_else(|| DensityError::UnknownFeature(feature.into()))?;
    let cells: Vec<&str> = table.column(j).filter(|c| !c.is_empty()).collect();
    if cells.is_empty() {
        return Err(DensityError::EmptyFeature(feature.into()));
    }
    match table.schema.kind(j) {
        FeatureKind::Categorical => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for c in &cells {
                *counts.entry(c).or_default() += 1;
            }
            let n = cells.len() as f64;
            Ok(DensityEntry::Categorical {
                frequencies: counts.into_iter().map(|(v, k)| (v.to_string(), k as f64 / n)).collect(),
            })
        }
        FeatureKind::Numeric => {
            let values = table.numeric_column(j);
            let decimals = cells.iter().map(|c| fraction_digits(c)).max().unwrap_or(0).min(12);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = table.schema.range(feature).map_or((lo, hi), |(a, b)| (a.min(lo), b.max(hi)));
            let mut distinct = values.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() == 1 {
                let var = 1e-9 * ((hi - lo) * (hi - lo)).max(1.0);
                let gmm = Gmm {
                    dim: 1,
                    components: vec![Component { weight: 1.0, mean: vec![distinct[0]], cov: vec![var] }],
                };
                return Ok(DensityEntry::Numeric { gmm, range: (lo, hi), decimals, degenerate: true });
            }
            let k = n_components.clamp(1, distinct.len());
            let floor = 1e-9 * ((hi - lo) * (hi - lo)).max(f64::MIN_POSITIVE);
            let fit =
                gmm::fit(&values, 1, &FitOptions { components: k, var_floor: floor, seed, ..FitOptions::default() })?;
            Ok(DensityEntry::Numeric { gmm: fit.gmm, range: (lo, hi), decimals, degenerate: false })
        }
    }
}

/// Marginals for every feature of a table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureDensity {
    pub features: BTreeMap<String, DensityEntry>,
}

impl FeatureDensity {
    /// Fits every feature, numeric ones with `min(5, distinct values)` components.
    pub fn fit(table: &Table, seed: u64) -> Result<Self, DensityError> {
        let mut features = BTreeMap::new();
        for name in table.schema.names() {
            features.insert(name.to_string(), fit_feature_density(table, name, MAX_COMPONENTS, seed)?);
        }
        Ok(FeatureDensity { features })
    }

    pub fn get(&self, feature: &str) -> Option<&DensityEntry> {
        self.features.get(feature)
    }
}
