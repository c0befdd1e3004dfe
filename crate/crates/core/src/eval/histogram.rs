use std::io::Write;

use super::{EvalError, Result};
use crate::table::{FeatureKind, Table};

/// Counts on a shared `bins × bins` grid; `counts[y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<Vec<usize>>,
}

impl JointHistogram {
    /// Grid CSV: a header of x-bin lower edges, then one line per y bin
    /// starting with its lower edge.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let bins = self.counts.len();
        let header: Vec<String> = self.x_edges[..bins].iter().map(|e| e.to_string()).collect();
        writeln!(out, "y\\x,{}", header.join(","))?;
        for (y, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(out, "{},{}", self.y_edges[y], cells.join(","))?;
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    (0..=bins).map(|b| lo + (hi - lo) * b as f64 / bins as f64).collect()
}

fn bin_of(v: f64, e: &[f64]) -> usize {
    let bins = e.len() - 1;
    let t = (v - e[0]) / (e[bins] - e[0]);
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Equal-width 2-D histograms of two numeric features, one per table, all on
/// the union range of the tables. Rows missing either cell are skipped.
pub fn joint_histogram(
    tables: &[&Table],
    feature_x: &str,
    feature_y: &str,
    bins: usize,
) -> Result<Vec<JointHistogram>> {
    if bins == 0 || tables.is_empty() {
        return Err(EvalError::InvalidArgument("need at least one bin and one table".into()));
    }
    let mut cols = Vec::new();
    for t in tables {
        let mut pair = Vec::new();
        for f in [feature_x, feature_y] {
            let j = t.schema.index_of(f).ok_or_else(|| EvalError::UnknownFeature(f.into()))?;
            if t.schema.kind(j) != FeatureKind::Numeric {
                return Err(EvalError::NonNumericFeature(f.into()));
            }
            pair.push(j);
        }
        let pts: Vec<(f64, f64)> = t
            .rows
            .iter()
            .filter_map(|r| {
                let x = crate::table::parse_decimal(&r.cells[pair[0]])?;
                let y = crate::table::parse_decimal(&r.cells[pair[1]])?;
                Some((x, y))
            })
            .collect();
        cols.push(pts);
    }
    let all = cols.iter().flatten();
    let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xl = xl.min(x);
        xh = xh.max(x);
        yl = yl.min(y);
        yh = yh.max(y);
    }
    if !xl.is_finite() {
        (xl, xh, yl, yh) = (0.0, 1.0, 0.0, 1.0);
    }
    let (xe, ye) = (edges(xl, xh, bins), edges(yl, yh, bins));
    Ok(cols
        .into_iter()
        .map(|pts| {
            let mut counts = vec![vec![0usize; bins]; bins];
            for (x, y) in pts {
                counts[bin_of(y, &ye)][bin_of(x, &xe)] += 1;
            }
            JointHistogram { x_edges: xe.clone(), y_edges: ye.clone(), counts }
        })
        .collect())
}
