//! Synthetic benchmark tables with known generating distributions.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::format_number;
use crate::gmm::{Component, Gmm};
use crate::rng;
use crate::table::{check_value, parse_decimal, Feature, FeatureKind, Row, Schema, Table, TableError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("table does not match the generator's schema")]
    SchemaMismatch,
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Rows of the covariance matrix.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalFeature {
    pub name: String,
    pub values: Vec<String>,
}

/// A categorical feature that is either a root with its own marginal or the
/// child of one earlier feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyFeature {
    pub name: String,
    pub values: Vec<String>,
    #[serde(default)]
    pub marginal: Option<Vec<f64>>,
    #[serde(default)]
    pub parent: Option<String>,
    /// Parent value to child distribution.
    #[serde(default)]
    pub given: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum GeneratorKind {
    /// Mixture of Gaussians over two numeric features.
    Gmm2D {
        components: Vec<GaussianSpec>,
        #[serde(default = "default_names")]
        names: Vec<String>,
        #[serde(default = "default_decimals")]
        decimals: usize,
    },
    /// A chain: the first feature from `initial`, every later one from the
    /// transition table indexed by the previous feature's value.
    MarkovCategorical {
        features: Vec<CategoricalFeature>,
        initial: Vec<f64>,
        /// `transitions[i][a][b]`: P(feature i+1 = b | feature i = a).
        transitions: Vec<Vec<Vec<f64>>>,
    },
    DependentToy {
        features: Vec<ToyFeature>,
    },
}

fn default_names() -> Vec<String> {
    vec!["x".into(), "y".into()]
}

fn default_decimals() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n_rows: usize,
    #[serde(default)]
    pub seed: u64,
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.len() != len || p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(BenchError::InvalidSpec(format!("{what} must be {len} non-negative weights summing to 1")));
    }
    Ok(())
}

fn check_values(name: &str, values: &[String]) -> Result<()> {
    let distinct: BTreeSet<&String> = values.iter().collect();
    if values.is_empty() || distinct.len() != values.len() {
        return Err(BenchError::InvalidSpec(format!("feature '{name}' needs distinct values")));
    }
    for v in values {
        if v.is_empty() || check_value(v).is_err() {
            return Err(BenchError::InvalidSpec(format!("feature '{name}' has unusable value '{v}'")));
        }
    }
    Ok(())
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

impl GeneratorSpec {
    fn mixture(&self) -> Option<Gmm> {
        match &self.kind {
            GeneratorKind::Gmm2D { components, .. } => Some(Gmm {
                dim: 2,
                components: components
                    .iter()
                    .map(|c| Component { weight: c.weight, mean: c.mean.clone(), cov: c.cov.concat() })
                    .collect(),
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            GeneratorKind::Gmm2D { components, names, decimals } => {
                if names.len() != 2 || names[0] == names[1] {
                    return Err(BenchError::InvalidSpec("two distinct feature names required".into()));
                }
                if *decimals > 12 {
                    return Err(BenchError::InvalidSpec("at most 12 decimals".into()));
                }
                for c in components {
                    if c.mean.len() != 2 || c.cov.len() != 2 || c.cov.iter().any(|r| r.len() != 2) {
                        return Err(BenchError::InvalidSpec("components must be 2-dimensional".into()));
                    }
                    if c.cov[0][1] != c.cov[1][0] {
                        return Err(BenchError::InvalidSpec("covariance must be symmetric".into()));
                    }
                }
                let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
                check_distribution(&weights, components.len(), "component weights")?;
                self.mixture().expect("gmm kind").validate().map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
            }
            GeneratorKind::MarkovCategorical { features, initial, transitions } => {
                if features.is_empty() || transitions.len() + 1 != features.len() {
                    return Err(BenchError::InvalidSpec(
                        "need one transition table between consecutive features".into(),
                    ));
                }
                for f in features {
                    check_values(&f.name, &f.values)?;
                }
                check_distribution(initial, features[0].values.len(), "initial distribution")?;
                for (i, t) in transitions.iter().enumerate() {
                    if t.len() != features[i].values.len() {
                        return Err(BenchError::InvalidSpec(format!("transition {i} needs one row per value")));
                    }
                    for row in t {
                        check_distribution(row, features[i + 1].values.len(), "transition row")?;
                    }
                }
            }
            GeneratorKind::DependentToy { features } => {
                let mut seen: BTreeMap<&str, &ToyFeature> = BTreeMap::new();
                for f in features {
                    check_values(&f.name, &f.values)?;
                    match (&f.marginal, &f.parent) {
                        (Some(m), None) => check_distribution(m, f.values.len(), "marginal")?,
                        (None, Some(p)) => {
                            let parent = seen.get(p.as_str()).ok_or_else(|| {
                                BenchError::InvalidSpec(format!("parent '{p}' of '{}' must come earlier", f.name))
                            })?;
                            for v in &parent.values {
                                let dist = f.given.get(v).ok_or_else(|| {
                                    BenchError::InvalidSpec(format!("'{}' lacks a distribution for {p}={v}", f.name))
                                })?;
                                check_distribution(dist, f.values.len(), "conditional distribution")?;
                            }
                        }
                        _ => {
                            return Err(BenchError::InvalidSpec(format!(
                                "'{}' needs exactly one of marginal or parent",
                                f.name
                            )))
                        }
                    }
                    seen.insert(&f.name, f);
                }
                if seen.len() != features.len() {
                    return Err(BenchError::InvalidSpec("duplicate feature names".into()));
                }
            }
        }
        Ok(())
    }

    fn schema(&self, rows: &[Row]) -> Schema {
        let categorical = |name: &str, values: &[String]| (name.to_string(), values.iter().cloned().collect());
        match &self.kind {
            GeneratorKind::Gmm2D { names, .. } => {
                let mut numeric_range = BTreeMap::new();
                for (j, n) in names.iter().enumerate() {
                    let vals = rows.iter().filter_map(|r| parse_decimal(&r.cells[j]));
                    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                    numeric_range.insert(n.clone(), (lo, hi));
                }
                Schema {
                    features: names.iter().map(|n| Feature { name: n.clone(), kind: FeatureKind::Numeric }).collect(),
                    categorical_support: BTreeMap::new(),
                    numeric_range,
                }
            }
            GeneratorKind::MarkovCategorical { features, .. } => Schema {
                features: features
                    .iter()
                    .map(|f| Feature { name: f.name.clone(), kind: FeatureKind::Categorical })
                    .collect(),
                categorical_support: features.iter().map(|f| categorical(&f.name, &f.values)).collect(),
                numeric_range: BTreeMap::new(),
            },
            GeneratorKind::DependentToy { features } => Schema {
                features: features
                    .iter()
                    .map(|f| Feature { name: f.name.clone(), kind: FeatureKind::Categorical })
                    .collect(),
                categorical_support: features.iter().map(|f| categorical(&f.name, &f.values)).collect(),
                numeric_range: BTreeMap::new(),
            },
        }
    }

    pub fn names(&self) -> Vec<String> {
        match &self.kind {
            GeneratorKind::Gmm2D { names, .. } => names.clone(),
            GeneratorKind::MarkovCategorical { features, .. } => features.iter().map(|f| f.name.clone()).collect(),
            GeneratorKind::DependentToy { features } => features.iter().map(|f| f.name.clone()).collect(),
        }
    }

    /// Categorical probability of one row; `None` for the numeric kind or a
    /// value outside the spec.
    fn row_probability(&self, cells: &[String]) -> Option<f64> {
        let pos = |values: &[String], v: &str| values.iter().position(|x| x == v);
        match &self.kind {
            GeneratorKind::Gmm2D { .. } => None,
            GeneratorKind::MarkovCategorical { features, initial, transitions } => {
                let mut prev = pos(&features[0].values, &cells[0])?;
                let mut p = initial[prev];
                for (i, t) in transitions.iter().enumerate() {
                    let cur = pos(&features[i + 1].values, &cells[i + 1])?;
                    p *= t[prev][cur];
                    prev = cur;
                }
                Some(p)
            }
            GeneratorKind::DependentToy { features } => {
                let mut p = 1.0;
                for (j, f) in features.iter().enumerate() {
                    let k = pos(&f.values, &cells[j])?;
                    p *= match (&f.marginal, &f.parent) {
                        (Some(m), _) => m[k],
                        (None, Some(parent)) => {
                            let pj = features.iter().position(|g| &g.name == parent)?;
                            f.given.get(&cells[pj])?[k]
                        }
                        _ => return None,
                    };
                }
                Some(p)
            }
        }
    }

    /// Every joint outcome with its probability (categorical kinds only).
    pub fn joint(&self) -> Option<BTreeMap<Vec<String>, f64>> {
        let value_lists: Vec<Vec<String>> = match &self.kind {
            GeneratorKind::Gmm2D { .. } => return None,
            GeneratorKind::MarkovCategorical { features, .. } => features.iter().map(|f| f.values.clone()).collect(),
            GeneratorKind::DependentToy { features } => features.iter().map(|f| f.values.clone()).collect(),
        };
        let mut out = BTreeMap::new();
        let mut combo: Vec<Vec<String>> = vec![Vec::new()];
        for values in &value_lists {
            combo = combo
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut n = c.clone();
                        n.push(v.clone());
                        n
                    })
                })
                .collect();
        }
        for c in combo {
            let p = self.row_probability(&c)?;
            out.insert(c, p);
        }
        Some(out)
    }
}

/// Draws `spec.n_rows` rows; identical specs give identical tables.
pub fn generate(spec: &GeneratorSpec) -> Result<Table> {
    spec.validate()?;
    if spec.n_rows == 0 {
        return Err(BenchError::InvalidSpec("n_rows must be positive".into()));
    }
    let mut rng = rng::stream(spec.seed, "bench");
    let rows: Vec<Row> = match &spec.kind {
        GeneratorKind::Gmm2D { decimals, .. } => {
            let gmm = spec.mixture().expect("gmm kind");
            (0..spec.n_rows)
                .map(|_| Row::new(gmm.sample(&mut rng).iter().map(|&v| format_number(v, *decimals)).collect()))
                .collect()
        }
        GeneratorKind::MarkovCategorical { features, initial, transitions } => (0..spec.n_rows)
            .map(|_| {
                let mut k = draw(initial, &mut rng);
                let mut cells = vec![features[0].values[k].clone()];
                for (i, t) in transitions.iter().enumerate() {
                    k = draw(&t[k], &mut rng);
                    cells.push(features[i + 1].values[k].clone());
                }
                Row::new(cells)
            })
            .collect(),
        GeneratorKind::DependentToy { features } => (0..spec.n_rows)
            .map(|_| {
                let mut cells: Vec<String> = Vec::with_capacity(features.len());
                for f in features {
                    let dist = match (&f.marginal, &f.parent) {
                        (Some(m), _) => m,
                        (None, Some(p)) => {
                            let pj = features.iter().position(|g| &g.name == p).expect("validated parent");
                            &f.given[&cells[pj]]
                        }
                        _ => unreachable!("validated feature"),
                    };
                    cells.push(f.values[draw(dist, &mut rng)].clone());
                }
                Row::new(cells)
            })
            .collect(),
    };
    Ok(Table::with_schema(spec.schema(&rows), rows)?)
}

/// Mean log-density (numeric kind) or mean log-probability (categorical
/// kinds) of the table's rows under the generating distribution.
pub fn true_loglik(spec: &GeneratorSpec, table: &Table) -> Result<f64> {
    spec.validate()?;
    let names: Vec<&str> = table.schema.names().collect();
    if names != spec.names().iter().map(String::as_str).collect::<Vec<_>>() || table.is_empty() {
        return Err(BenchError::SchemaMismatch);
    }
    let mut total = 0.0;
    match spec.mixture() {
        Some(gmm) => {
            for r in &table.rows {
                let x: Vec<f64> = r
                    .cells
                    .iter()
                    .map(|c| parse_decimal(c))
                    .collect::<Option<_>>()
                    .ok_or(BenchError::SchemaMismatch)?;
                total += gmm.log_density(&x).map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
            }
        }
        None => {
            for r in &table.rows {
                total += spec.row_probability(&r.cells).ok_or(BenchError::SchemaMismatch)?.ln();
            }
        }
    }
    Ok(total / table.len() as f64)
}

/// The 6000-row, two-feature mixture used for the likelihood benchmark.
pub fn gmm_benchmark() -> GeneratorSpec {
    let g = |weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]| GaussianSpec {
        weight,
        mean: mean.to_vec(),
        cov: cov.iter().map(|r| r.to_vec()).collect(),
    };
    GeneratorSpec {
        kind: GeneratorKind::Gmm2D {
            components: vec![
                g(0.5, [-3.0, -2.0], [[1.0, 0.5], [0.5, 1.0]]),
                g(0.3, [2.0, 3.0], [[0.6, -0.2], [-0.2, 0.8]]),
                g(0.2, [3.0, -3.0], [[0.5, 0.0], [0.0, 1.5]]),
            ],
            names: default_names(),
            decimals: 2,
        },
        n_rows: 6000,
        seed: 2022,
    }
}

/// A three-feature chain over word values with 12 joint outcomes.
pub fn markov_benchmark() -> GeneratorSpec {
    let f = |name: &str, values: &[&str]| CategoricalFeature {
        name: name.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
    };
    GeneratorSpec {
        kind: GeneratorKind::MarkovCategorical {
            features: vec![
                f("weather", &["sunny", "rainy"]),
                f("activity", &["hike", "read", "swim"]),
                f("mood", &["happy", "tired"]),
            ],
            initial: vec![0.6, 0.4],
            transitions: vec![
                vec![vec![0.5, 0.1, 0.4], vec![0.1, 0.8, 0.1]],
                vec![vec![0.3, 0.7], vec![0.8, 0.2], vec![0.6, 0.4]],
            ],
        },
        n_rows: 5000,
        seed: 7,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_roundtrip() {
        for spec in [gmm_benchmark(), markov_benchmark()] {
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<GeneratorSpec>(&json).unwrap(), spec);
        }
        let text = r#"{"kind":"DependentToy","n_rows":5,"features":[
            {"name":"a","values":["p","q"],"marginal":[0.5,0.5]},
            {"name":"b","values":["r","s"],"parent":"a","given":{"p":[1,0],"q":[0,1]}}]}"#;
        let spec: GeneratorSpec = serde_json::from_str(text).unwrap();
        spec.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = markov_benchmark();
        if let GeneratorKind::MarkovCategorical { initial, .. } = &mut spec.kind {
            initial[0] = 0.7;
        }
        assert!(matches!(generate(&spec), Err(BenchError::InvalidSpec(_))));
        let mut spec = gmm_benchmark();
        if let GeneratorKind::Gmm2D { components, .. } = &mut spec.kind {
            components[0].cov = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        }
        assert!(matches!(spec.validate(), Err(BenchError::InvalidSpec(_))));
        let unknown = r#"{"kind":"Gmm2D","components":[],"n_rows":1,"extra":1}"#;
        assert!(serde_json::from_str::<GeneratorSpec>(unknown).is_err());
    }

    #[test]
    fn joint_sums_to_one() {
        let joint = markov_benchmark().joint().unwrap();
        assert_eq!(joint.len(), 12);
        assert!((joint.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn benchmark_shape() {
        let t = generate(&gmm_benchmark()).unwrap();
        assert_eq!((t.len(), t.schema.len()), (6000, 2));
        assert!(t.schema.features.iter().all(|f| f.kind == FeatureKind::Numeric));
    }
}
