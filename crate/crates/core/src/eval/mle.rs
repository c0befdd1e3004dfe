use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::design::{class_labels, Encoder, Matrix};
use super::linear::{LinearOptions, LinearRegression, LogisticRegression};
use super::metrics::{accuracy, macro_f1, mse, roc_auc};
use super::tree::{argmax, Forest, Target, Tree, TreeOptions};
use super::{check_same_schema, EvalError, MetricSummary, Result};
use crate::rng;
use crate::table::{parse_decimal, FeatureKind, Table};

/// Fixed evaluator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleOptions {
    pub max_iter: usize,
    pub tree_depth: usize,
    pub forest_trees: usize,
    pub forest_depth: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { max_iter: 500, tree_depth: 12, forest_trees: 100, forest_depth: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model: String,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub task: String,
    pub models: Vec<ModelScores>,
}

impl MleResult {
    pub fn metric(&self, model: &str, metric: &str) -> Option<&MetricSummary> {
        self.models.iter().find(|m| m.model == model)?.metrics.get(metric)
    }
}

/// Scores of evaluators trained on synthetic rows and on real rows, both
/// tested on the same real test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleComparison {
    pub target: String,
    pub synthetic: MleResult,
    pub real: MleResult,
}

type Predictor<'a, T> = Box<dyn Fn(&[f64]) -> T + 'a>;

const MODELS: [&str; 3] = ["linear", "decision_tree", "random_forest"];

enum Labels {
    Classes(Vec<usize>, usize),
    Values(Vec<f64>),
}

fn observed_target(t: &Table, j: usize) -> Table {
    t.with_rows(t.rows.iter().filter(|r| !r.cells[j].is_empty()).cloned().collect())
}

fn run(
    train_x: &Matrix,
    train_y: &Labels,
    test_x: &Matrix,
    test_y: &Labels,
    seeds: &[u64],
    opts: &MleOptions,
) -> MleResult {
    let lin = LinearOptions { max_iter: opts.max_iter, ..LinearOptions::default() };
    let tree_opts = TreeOptions { max_depth: opts.tree_depth, ..TreeOptions::default() };
    let forest_opts = TreeOptions { max_depth: opts.forest_depth, ..TreeOptions::default() };
    let mut per_model: Vec<BTreeMap<String, Vec<f64>>> = vec![BTreeMap::new(); MODELS.len()];
    match (train_y, test_y) {
        (Labels::Classes(ytr, k), Labels::Classes(yte, _)) => {
            let target = Target::Classes { labels: ytr, n_classes: *k };
            // the linear model is deterministic, so it is fitted once
            let logistic = LogisticRegression::fit(train_x, ytr, *k, lin);
            for &seed in seeds {
                let mut rng = rng::stream(seed, "mle");
                let tree = Tree::fit(train_x, &target, tree_opts, &mut rng);
                let forest = Forest::fit(train_x, &target, opts.forest_trees, forest_opts, &mut rng);
                let predictors: [Predictor<Vec<f64>>; 3] = [
                    Box::new(|r| logistic.predict_proba(r)),
                    Box::new(|r| tree.predict_row(r).to_vec()),
                    Box::new(|r| forest.predict_row(r)),
                ];
                for (m, predict) in predictors.iter().enumerate() {
                    let proba: Vec<Vec<f64>> = (0..test_x.rows).map(|i| predict(test_x.row(i))).collect();
                    let pred: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
                    let scores = &mut per_model[m];
                    scores.entry("accuracy".into()).or_default().push(accuracy(yte, &pred));
                    scores.entry("roc_auc".into()).or_default().push(roc_auc(yte, &proba, *k));
                    scores.entry("macro_f1".into()).or_default().push(macro_f1(yte, &pred, *k));
                }
            }
        }
        (Labels::Values(ytr), Labels::Values(yte)) => {
            let target = Target::Values(ytr);
            let linear = LinearRegression::fit(train_x, ytr, lin);
            for &seed in seeds {
                let mut rng = rng::stream(seed, "mle");
                let tree = Tree::fit(train_x, &target, tree_opts, &mut rng);
                let forest = Forest::fit(train_x, &target, opts.forest_trees, forest_opts, &mut rng);
                let predictors: [Predictor<f64>; 3] = [
                    Box::new(|r| linear.predict(r)),
                    Box::new(|r| tree.predict_row(r)[0]),
                    Box::new(|r| forest.predict_row(r)[0]),
                ];
                for (m, predict) in predictors.iter().enumerate() {
                    let pred: Vec<f64> = (0..test_x.rows).map(|i| predict(test_x.row(i))).collect();
                    per_model[m].entry("mse".into()).or_default().push(mse(yte, &pred));
                }
            }
        }
        _ => unreachable!("train and test labels share a task"),
    }
    let task = if matches!(train_y, Labels::Classes(..)) { "classification" } else { "regression" };
    MleResult {
        task: task.into(),
        models: MODELS
            .iter()
            .zip(per_model)
            .map(|(name, scores)| ModelScores {
                model: name.to_string(),
                metrics: scores.into_iter().map(|(k, v)| (k, MetricSummary::new(v))).collect(),
            })
            .collect(),
    }
}

/// Trains the built-in evaluators on `synth_train` and on `real_train` and
/// scores both on `real_test`. Rows with a missing target are ignored. The
/// task is classification for a categorical target and regression otherwise.
pub fn mle(
    real_train: &Table,
    synth_train: &Table,
    real_test: &Table,
    target: &str,
    seeds: &[u64],
    opts: &MleOptions,
) -> Result<MleComparison> {
    check_same_schema(&[real_train, synth_train, real_test])?;
    if seeds.is_empty() {
        return Err(EvalError::InvalidArgument("no seeds".into()));
    }
    let j = real_train.schema.index_of(target).ok_or_else(|| EvalError::UnknownFeature(target.into()))?;
    let (rt, st, te) = (observed_target(real_train, j), observed_target(synth_train, j), observed_target(real_test, j));
    for (what, t) in [("real train", &rt), ("synthetic train", &st), ("real test", &te)] {
        if t.is_empty() {
            return Err(EvalError::TooFewRows { what, found: 0, needed: 1 });
        }
    }
    let encoder = Encoder::fit(&[&rt, &st, &te], Some(j));
    let labels = |t: &Table| -> Labels {
        match real_train.schema.kind(j) {
            FeatureKind::Categorical => {
                let ids = class_labels(&[&rt, &st, &te], j);
                Labels::Classes(t.column(j).map(|c| ids[c]).collect(), ids.len())
            }
            FeatureKind::Numeric => Labels::Values(t.column(j).map(|c| parse_decimal(c).unwrap_or(f64::NAN)).collect()),
        }
    };
    for t in [&rt, &st] {
        if let Labels::Classes(y, _) = labels(t) {
            if y.iter().all(|&c| c == y[0]) {
                return Err(EvalError::SingleClassTarget(target.into()));
            }
        }
    }
    let test_x = encoder.transform(&te);
    let test_y = labels(&te);
    Ok(MleComparison {
        target: target.into(),
        synthetic: run(&encoder.transform(&st), &labels(&st), &test_x, &test_y, seeds, opts),
        real: run(&encoder.transform(&rt), &labels(&rt), &test_x, &test_y, seeds, opts),
    })
}
