use std::collections::{BTreeMap, BTreeSet};

use crate::table::{parse_decimal, FeatureKind, Table};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Matrix { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn select(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        Matrix { rows: self.rows + other.rows, cols: self.cols, data: [self.data.as_slice(), &other.data].concat() }
    }
}

#[derive(Debug, Clone)]
enum Column {
    Numeric { j: usize, fill: f64 },
    OneHot { j: usize, values: Vec<String> },
}

/// Maps table rows to numeric feature vectors: numeric cells pass through
/// (missing ones take the mean of the fitting data), categoricals become
/// one-hot blocks over the union of observed values.
#[derive(Debug, Clone)]
pub struct Encoder {
    columns: Vec<Column>,
    width: usize,
}

impl Encoder {
    pub fn fit(tables: &[&Table], exclude: Option<usize>) -> Self {
        let schema = &tables[0].schema;
        let mut columns = Vec::new();
        let mut width = 0;
        for (j, f) in schema.features.iter().enumerate() {
            if Some(j) == exclude {
                continue;
            }
            match f.kind {
                FeatureKind::Numeric => {
                    let vals: Vec<f64> = tables.iter().flat_map(|t| t.numeric_column(j)).collect();
                    let fill = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
                    columns.push(Column::Numeric { j, fill });
                    width += 1;
                }
                FeatureKind::Categorical => {
                    let values: BTreeSet<String> =
                        tables.iter().flat_map(|t| t.column(j).filter(|c| !c.is_empty()).map(str::to_string)).collect();
                    width += values.len();
                    columns.push(Column::OneHot { j, values: values.into_iter().collect() });
                }
            }
        }
        Encoder { columns, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn transform(&self, table: &Table) -> Matrix {
        let mut m = Matrix::zeros(table.len(), self.width);
        for (i, row) in table.rows.iter().enumerate() {
            let out = &mut m.data[i * self.width..(i + 1) * self.width];
            let mut k = 0;
            for c in &self.columns {
                match c {
                    Column::Numeric { j, fill } => {
                        out[k] = parse_decimal(&row.cells[*j]).unwrap_or(*fill);
                        k += 1;
                    }
                    Column::OneHot { j, values } => {
                        if let Ok(pos) = values.binary_search(&row.cells[*j]) {
                            out[k + pos] = 1.0;
                        }
                        k += values.len();
                    }
                }
            }
        }
        m
    }
}

/// Class ids for a categorical column over a shared, sorted label set.
pub(crate) fn class_labels(tables: &[&Table], j: usize) -> BTreeMap<String, usize> {
    let labels: BTreeSet<&str> = tables.iter().flat_map(|t| t.column(j)).collect();
    labels.into_iter().enumerate().map(|(i, l)| (l.to_string(), i)).collect()
}
