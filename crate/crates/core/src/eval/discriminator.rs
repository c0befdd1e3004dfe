use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::design::{Encoder, Matrix};
use super::tree::{argmax, Forest, Target, TreeOptions};
use super::{check_same_schema, EvalError, MetricSummary, Result};
use crate::rng;
use crate::table::Table;

pub const MIN_ROWS: usize = 20;

/// Hyperparameter grid searched by k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorOptions {
    pub depths: Vec<usize>,
    pub trees: Vec<usize>,
    pub folds: usize,
}

impl Default for DiscriminatorOptions {
    fn default() -> Self {
        DiscriminatorOptions { depths: vec![6, 12, 20], trees: vec![50, 100], folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorResult {
    pub accuracy: MetricSummary,
    /// Selected `(depth, trees)` per seed.
    pub chosen: Vec<(usize, usize)>,
}

fn forest_accuracy(forest: &Forest, n_trees: usize, x: &Matrix, y: &[usize]) -> f64 {
    let hits = (0..x.rows).filter(|&i| argmax(&forest.predict_row_with(x.row(i), n_trees)) == y[i]).count();
    hits as f64 / x.rows as f64
}

/// Held-out accuracy of a random forest separating real rows (label 1) from
/// synthetic rows (label 0). 0.5 means indistinguishable.
pub fn discriminator(
    real_train: &Table,
    synth_train: &Table,
    real_test: &Table,
    synth_test: &Table,
    seeds: &[u64],
    opts: &DiscriminatorOptions,
) -> Result<DiscriminatorResult> {
    let all = [real_train, synth_train, real_test, synth_test];
    check_same_schema(&all)?;
    for (what, t) in ["real train", "synthetic train", "real test", "synthetic test"].into_iter().zip(all) {
        if t.len() < MIN_ROWS {
            return Err(EvalError::TooFewRows { what, found: t.len(), needed: MIN_ROWS });
        }
    }
    if real_test.len() != synth_test.len() {
        return Err(EvalError::InvalidArgument(format!(
            "test halves must be equal-sized, got {} real and {} synthetic",
            real_test.len(),
            synth_test.len()
        )));
    }
    if seeds.is_empty() || opts.depths.is_empty() || opts.trees.is_empty() || opts.folds < 2 {
        return Err(EvalError::InvalidArgument("empty seed list or search grid".into()));
    }
    let encoder = Encoder::fit(&all, None);
    let x = encoder.transform(synth_train).vstack(&encoder.transform(real_train));
    let y: Vec<usize> = (0..x.rows).map(|i| usize::from(i >= synth_train.len())).collect();
    let test_x = encoder.transform(synth_test).vstack(&encoder.transform(real_test));
    let test_y: Vec<usize> = (0..test_x.rows).map(|i| usize::from(i >= synth_test.len())).collect();
    let max_trees = *opts.trees.iter().max().expect("non-empty grid");

    let mut accs = Vec::new();
    let mut chosen = Vec::new();
    for &seed in seeds {
        let mut rng = rng::stream(seed, "discriminator");
        let mut order: Vec<usize> = (0..x.rows).collect();
        order.shuffle(&mut rng);
        let fold_of = |pos: usize| pos * opts.folds / order.len();
        // grid scores, depth-major then tree count
        let mut scores = vec![0.0; opts.depths.len() * opts.trees.len()];
        for fold in 0..opts.folds {
            let (mut fit_idx, mut val_idx) = (Vec::new(), Vec::new());
            for (pos, &i) in order.iter().enumerate() {
                if fold_of(pos) == fold {
                    val_idx.push(i)
                } else {
                    fit_idx.push(i)
                }
            }
            let (fx, vx) = (x.select(&fit_idx), x.select(&val_idx));
            let fy: Vec<usize> = fit_idx.iter().map(|&i| y[i]).collect();
            let vy: Vec<usize> = val_idx.iter().map(|&i| y[i]).collect();
            let target = Target::Classes { labels: &fy, n_classes: 2 };
            for (d, &depth) in opts.depths.iter().enumerate() {
                // one forest per depth; smaller counts use its leading trees
                let forest = Forest::fit(
                    &fx,
                    &target,
                    max_trees,
                    TreeOptions { max_depth: depth, ..TreeOptions::default() },
                    &mut rng,
                );
                for (t, &n) in opts.trees.iter().enumerate() {
                    scores[d * opts.trees.len() + t] += forest_accuracy(&forest, n, &vx, &vy) / opts.folds as f64;
                }
            }
        }
        let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let (depth, n_trees) = (opts.depths[best / opts.trees.len()], opts.trees[best % opts.trees.len()]);
        let target = Target::Classes { labels: &y, n_classes: 2 };
        let forest =
            Forest::fit(&x, &target, n_trees, TreeOptions { max_depth: depth, ..TreeOptions::default() }, &mut rng);
        accs.push(forest_accuracy(&forest, n_trees, &test_x, &test_y));
        chosen.push((depth, n_trees));
    }
    Ok(DiscriminatorResult { accuracy: MetricSummary::new(accs), chosen })
}
