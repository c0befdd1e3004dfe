//! Typed tables over raw string cells.
//!
//! Cells are kept exactly as they appear in the source file. The schema adds a
//! typed view (numeric or categorical) plus the supports and ranges observed at
//! fit time; numbers are parsed on demand and never re-formatted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRows { row: usize, found: usize, expected: usize },
    #[error("table has no data rows")]
    EmptyTable,
    #[error("column '{0}' has no observed values")]
    EmptyColumn(String),
    #[error("row {row}, feature '{feature}': {reason}")]
    ReservedText { row: usize, feature: String, reason: &'static str },
    #[error("invalid feature name '{0}'")]
    BadFeatureName(String),
    #[error("duplicate feature name '{0}'")]
    DuplicateFeature(String),
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("row {row}, feature '{feature}': '{value}' is not a finite decimal number")]
    NotNumeric { row: usize, feature: String, value: String },
    #[error("test fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("need at least {needed} rows, have {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("schemas differ")]
    SchemaMismatch,
}

pub type Result<T> = std::result::Result<T, TableError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<Feature>,
    pub categorical_support: BTreeMap<String, BTreeSet<String>>,
    pub numeric_range: BTreeMap<String, (f64, f64)>,
}

impl Schema {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn kind(&self, j: usize) -> FeatureKind {
        self.features[j].kind
    }

    pub fn support(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.categorical_support.get(name)
    }

    pub fn range(&self, name: &str) -> Option<(f64, f64)> {
        self.numeric_range.get(name).copied()
    }

    /// True when both schemas list the same features with the same kinds.
    pub fn same_layout(&self, other: &Schema) -> bool {
        self.features == other.features
    }

    /// Checks the structural invariants: unique, grammar-safe names, a
    /// non-empty support for every categorical and an ordered range for every
    /// numeric feature.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for f in &self.features {
            check_feature_name(&f.name)?;
            if !seen.insert(f.name.as_str()) {
                return Err(TableError::DuplicateFeature(f.name.clone()));
            }
            match f.kind {
                FeatureKind::Categorical => match self.categorical_support.get(&f.name) {
                    Some(s) if !s.is_empty() => {}
                    _ => return Err(TableError::EmptyColumn(f.name.clone())),
                },
                FeatureKind::Numeric => match self.numeric_range.get(&f.name) {
                    Some((lo, hi)) if lo <= hi => {}
                    _ => return Err(TableError::EmptyColumn(f.name.clone())),
                },
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Row {
    pub cells: Vec<String>,
}

impl Row {
    pub fn new(cells: Vec<String>) -> Self {
        Row { cells }
    }

    pub fn is_missing(&self, j: usize) -> bool {
        self.cells[j].is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_empty()).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cells.len()).filter(move |&j| !self.cells[j].is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Row>,
    pub target_feature: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',', has_header: true }
    }
}

/// Strict decimal syntax: optional sign, digits with an optional point, optional
/// exponent. Rejects `inf`, `nan`, hex and anything with surrounding whitespace.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn check_feature_name(name: &str) -> Result<()> {
    let padded = format!(" {name} ");
    if name.is_empty() || name.contains(", ") || padded.contains(" is ") || name.contains('\n') || name.contains('\r') {
        return Err(TableError::BadFeatureName(name.to_string()));
    }
    Ok(())
}

/// Values must not contain the clause delimiter, the ` is ` separator or line breaks.
pub fn check_value(value: &str) -> std::result::Result<(), &'static str> {
    if value.contains(", ") {
        Err("value contains the clause delimiter \", \"")
    } else if value.contains(" is ") {
        Err("value contains the separator \" is \"")
    } else if value.contains('\n') || value.contains('\r') {
        Err("value contains a line break")
    } else {
        Ok(())
    }
}

impl Table {
    /// Builds a table whose schema is inferred from the cells: a column is numeric
    /// iff every non-missing cell is a finite decimal.
    pub fn infer(names: Vec<String>, rows: Vec<Row>) -> Result<Table> {
        if rows.is_empty() {
            return Err(TableError::EmptyTable);
        }
        let m = names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.cells.len() != m {
                return Err(TableError::RaggedRows { row: i, found: r.cells.len(), expected: m });
            }
        }
        let features = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let numeric = rows
                    .iter()
                    .map(|r| r.cells[j].as_str())
                    .filter(|c| !c.is_empty())
                    .all(|c| parse_decimal(c).is_some());
                let kind = if numeric { FeatureKind::Numeric } else { FeatureKind::Categorical };
                Feature { name, kind }
            })
            .collect();
        let provisional = Schema { features, categorical_support: BTreeMap::new(), numeric_range: BTreeMap::new() };
        let mut table = Table { schema: provisional, rows, target_feature: None };
        table.schema = fit_schema_stats(&table)?;
        table.validate()?;
        Ok(table)
    }

    /// Builds a table against a known schema, checking every row. Categorical
    /// cells must lie in the schema's support.
    pub fn with_schema(schema: Schema, rows: Vec<Row>) -> Result<Table> {
        let table = Table { schema, rows, target_feature: None };
        table.validate()?;
        for (i, r) in table.rows.iter().enumerate() {
            for (j, c) in r.cells.iter().enumerate() {
                if c.is_empty() {
                    continue;
                }
                let f = &table.schema.features[j];
                if f.kind == FeatureKind::Categorical && !table.schema.categorical_support[&f.name].contains(c) {
                    return Err(TableError::ReservedText {
                        row: i,
                        feature: f.name.clone(),
                        reason: "value outside the categorical support",
                    });
                }
            }
        }
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let m = self.schema.len();
        for (i, r) in self.rows.iter().enumerate() {
            if r.cells.len() != m {
                return Err(TableError::RaggedRows { row: i, found: r.cells.len(), expected: m });
            }
            for (j, c) in r.cells.iter().enumerate() {
                let f = &self.schema.features[j];
                if let Err(reason) = check_value(c) {
                    return Err(TableError::ReservedText { row: i, feature: f.name.clone(), reason });
                }
                if f.kind == FeatureKind::Numeric && !c.is_empty() && parse_decimal(c).is_none() {
                    return Err(TableError::NotNumeric { row: i, feature: f.name.clone(), value: c.clone() });
                }
            }
        }
        if let Some(t) = &self.target_feature {
            if self.schema.index_of(t).is_none() {
                return Err(TableError::UnknownFeature(t.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn with_target(mut self, target: &str) -> Result<Table> {
        if self.schema.index_of(target).is_none() {
            return Err(TableError::UnknownFeature(target.to_string()));
        }
        self.target_feature = Some(target.to_string());
        Ok(self)
    }

    /// Same schema and target, different rows.
    pub fn with_rows(&self, rows: Vec<Row>) -> Table {
        Table { schema: self.schema.clone(), rows, target_feature: self.target_feature.clone() }
    }

    pub fn select(&self, indices: &[usize]) -> Table {
        self.with_rows(indices.iter().map(|&i| self.rows[i].clone()).collect())
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r.cells[j].as_str())
    }

    /// Parsed numeric column, skipping missing cells.
    pub fn numeric_column(&self, j: usize) -> Vec<f64> {
        self.column(j).filter_map(parse_decimal).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.rows.iter().any(|r| r.missing_count() > 0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(self.schema.names()).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(&r.cells).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> TableError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TableError::Io(io),
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => TableError::RaggedRows {
            row: pos.map(|p| p.record() as usize).unwrap_or(0),
            found: len as usize,
            expected: expected_len as usize,
        },
        other => TableError::Csv(format!("{other:?}")),
    }
}

/// Reads raw header names and rows without typing them.
pub fn read_csv_raw<R: Read>(input: R, options: CsvOptions) -> Result<(Vec<String>, Vec<Row>)> {
    let mut reader =
        csv::ReaderBuilder::new().delimiter(options.delimiter).has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();
    let mut names: Option<Vec<String>> = None;
    if options.has_header {
        match records.next() {
            Some(h) => names = Some(h.map_err(csv_err)?.iter().map(str::to_string).collect()),
            None => return Err(TableError::EmptyTable),
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let cells: Vec<String> = rec.iter().map(str::to_string).collect();
        let m = names.get_or_insert_with(|| (0..cells.len()).map(|j| format!("col{j}")).collect()).len();
        if cells.len() != m {
            return Err(TableError::RaggedRows { row: i, found: cells.len(), expected: m });
        }
        rows.push(Row::new(cells));
    }
    Ok((names.unwrap_or_default(), rows))
}

pub fn read_csv<R: Read>(input: R, options: CsvOptions) -> Result<Table> {
    let (names, rows) = read_csv_raw(input, options)?;
    Table::infer(names, rows)
}

/// Loads a CSV file and infers its schema.
pub fn load_csv(path: impl AsRef<Path>, options: CsvOptions) -> Result<Table> {
    read_csv(File::open(path)?, options)
}

/// Loads a CSV file whose header must match `schema` exactly.
pub fn load_csv_with_schema(path: impl AsRef<Path>, schema: &Schema) -> Result<Table> {
    let (names, rows) = read_csv_raw(File::open(path)?, CsvOptions::default())?;
    if !names.iter().map(String::as_str).eq(schema.names()) {
        return Err(TableError::SchemaMismatch);
    }
    Table::with_schema(schema.clone(), rows)
}

/// Exact distinct-value supports and min/max ranges over the non-missing cells.
pub fn fit_schema_stats(table: &Table) -> Result<Schema> {
    if table.is_empty() {
        return Err(TableError::EmptyTable);
    }
    let mut categorical_support = BTreeMap::new();
    let mut numeric_range = BTreeMap::new();
    for (j, f) in table.schema.features.iter().enumerate() {
        match f.kind {
            FeatureKind::Categorical => {
                let support: BTreeSet<String> = table.column(j).filter(|c| !c.is_empty()).map(str::to_string).collect();
                if support.is_empty() {
                    return Err(TableError::EmptyColumn(f.name.clone()));
                }
                categorical_support.insert(f.name.clone(), support);
            }
            FeatureKind::Numeric => {
                let values = table.numeric_column(j);
                if values.is_empty() {
                    return Err(TableError::EmptyColumn(f.name.clone()));
                }
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                numeric_range.insert(f.name.clone(), (lo, hi));
            }
        }
    }
    Ok(Schema { features: table.schema.features.clone(), categorical_support, numeric_range })
}

/// Deterministic shuffled split. The training part receives `ceil((1 - f) * n)`
/// rows, clamped so that neither part is empty.
pub fn split(table: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TableError::InvalidFraction(test_fraction));
    }
    let n = table.len();
    if n < 2 {
        return Err(TableError::TooFewRows { needed: 2, found: n });
    }
    let n_train = (((1.0 - test_fraction) * n as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "split"));
    let (a, b) = idx.split_at(n_train);
    Ok((table.select(a), table.select(b)))
}
