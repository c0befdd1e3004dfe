use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_same_schema, EvalError, Result};
use crate::table::{parse_decimal, FeatureKind, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrResult {
    /// Per synthetic row; left out of serialized reports.
    #[serde(default, skip_serializing)]
    pub distances: Vec<f64>,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub zero_fraction: f64,
    pub normalized: bool,
}

enum Col {
    Num { values: Vec<f64>, width: f64 },
    Cat { ids: Vec<u32> },
}

/// Column-wise codes for both tables: numeric cells parsed (NaN when
/// missing), categorical cells interned (0 when missing).
fn columns(table: &Table, other: &Table, normalized: bool) -> (Vec<Col>, Vec<Col>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (j, f) in table.schema.features.iter().enumerate() {
        match f.kind {
            FeatureKind::Numeric => {
                let parse =
                    |t: &Table| -> Vec<f64> { t.column(j).map(|c| parse_decimal(c).unwrap_or(f64::NAN)).collect() };
                let (va, vb) = (parse(table), parse(other));
                let observed = vb.iter().filter(|v| !v.is_nan());
                let lo = observed.clone().fold(f64::INFINITY, |m, &v| m.min(v));
                let hi = observed.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let range = if hi > lo { hi - lo } else { 1.0 };
                let width = if normalized { range } else { 1.0 };
                a.push(Col::Num { values: va, width });
                b.push(Col::Num { values: vb, width });
            }
            FeatureKind::Categorical => {
                let mut intern: HashMap<String, u32> = HashMap::from([(String::new(), 0)]);
                let mut code = |t: &Table| -> Vec<u32> {
                    t.column(j)
                        .map(|c| {
                            let next = intern.len() as u32;
                            *intern.entry(c.to_string()).or_insert(next)
                        })
                        .collect()
                };
                let ids_a = code(table);
                let ids_b = code(other);
                a.push(Col::Cat { ids: ids_a });
                b.push(Col::Cat { ids: ids_b });
            }
        }
    }
    (a, b)
}

fn cell_distance(a: &Col, i: usize, b: &Col, k: usize) -> f64 {
    match (a, b) {
        (Col::Num { values: va, width }, Col::Num { values: vb, .. }) => {
            let (x, y) = (va[i], vb[k]);
            match (x.is_nan(), y.is_nan()) {
                (false, false) => (x - y).abs() / width,
                (true, true) => 0.0,
                _ => 1.0,
            }
        }
        (Col::Cat { ids: ia }, Col::Cat { ids: ib }) => f64::from(u8::from(ia[i] != ib[k])),
        _ => unreachable!("columns built from one schema"),
    }
}

/// Distance from every synthetic row to its closest training row: the sum of
/// absolute numeric differences plus one per differing categorical cell. With
/// `normalized`, numeric differences are divided by the training range.
/// A missing cell matches only another missing cell and costs 1 otherwise.
pub fn dcr(synthetic: &Table, train: &Table, normalized: bool) -> Result<DcrResult> {
    dcr_parallel(synthetic, train, normalized, 1)
}

fn closest(syn: &[Col], real: &[Col], i: usize, n_train: usize) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..n_train {
        let mut d = 0.0;
        for (a, b) in syn.iter().zip(real) {
            d += cell_distance(a, i, b, k);
            if d >= best {
                break;
            }
        }
        best = best.min(d);
        if best == 0.0 {
            break;
        }
    }
    best
}

/// [`dcr`] with the synthetic rows split over `workers` threads. Rows are
/// independent, so the result does not depend on the worker count.
pub fn dcr_parallel(synthetic: &Table, train: &Table, normalized: bool, workers: usize) -> Result<DcrResult> {
    check_same_schema(&[synthetic, train])?;
    if train.is_empty() || synthetic.is_empty() {
        return Err(EvalError::TooFewRows { what: "dcr", found: 0, needed: 1 });
    }
    let (syn, real) = columns(synthetic, train, normalized);
    let n = synthetic.len();
    let chunk = n.div_ceil(workers.clamp(1, n));
    let distances: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let (syn, real) = (&syn, &real);
                s.spawn(move || {
                    (start..(start + chunk).min(n)).map(|i| closest(syn, real, i, train.len())).collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("dcr worker panicked")).collect()
    });
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Ok(DcrResult {
        min: sorted[0],
        median,
        mean: distances.iter().sum::<f64>() / n as f64,
        zero_fraction: distances.iter().filter(|&&d| d == 0.0).count() as f64 / n as f64,
        distances,
        normalized,
    })
}

/// Equal-width histogram of distances over `[0, max]` as `(lo, hi, count)`.
pub fn dcr_histogram(distances: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let max = distances.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &d in distances {
        counts[((d / width) as usize).min(bins - 1)] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (b as f64 * width, (b + 1) as f64 * width, c)).collect()
}
