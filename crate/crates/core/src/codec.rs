//! Row ⇄ text conversion.
//!
//! A row becomes a sequence of clauses `"<feature> is <value>"` joined by `", "`
//! and closed with a trailing `","`, e.g. `"Age is 34, Gender is female,"`.
//! Missing cells produce no clause. Clause order is given by a [`Permutation`]
//! over the observed features.
//!
//! Parsing is total: any string yields a [`ParseOutcome`], never a panic.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{check_value, parse_decimal, FeatureKind, Row, Schema};

pub const SEPARATOR: &str = " is ";
pub const DELIMITER: &str = ", ";
pub const TERMINATOR: &str = ",";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("permutation is not a bijection on {expected} observed features")]
    BadPermutation { expected: usize },
    #[error("feature '{0}' appears more than once")]
    DuplicateFeature(String),
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    pub feature: String,
    pub value: String,
}

impl Clause {
    pub fn new(feature: impl Into<String>, value: impl Into<String>) -> Self {
        Clause { feature: feature.into(), value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRecord {
    pub clauses: Vec<Clause>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    indices: Vec<usize>,
}

impl Permutation {
    pub fn new(indices: Vec<usize>) -> Result<Self, CodecError> {
        let m = indices.len();
        let mut seen = vec![false; m];
        for &i in &indices {
            if i >= m || std::mem::replace(&mut seen[i], true) {
                return Err(CodecError::BadPermutation { expected: m });
            }
        }
        Ok(Permutation { indices })
    }

    pub fn identity(m: usize) -> Self {
        Permutation { indices: (0..m).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform over all `m!` orderings (Fisher–Yates).
pub fn sample_permutation<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Permutation {
    let mut indices: Vec<usize> = (0..m).collect();
    indices.shuffle(rng);
    Permutation { indices }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InvalidReason {
    UnknownFeature,
    DuplicateFeature,
    MissingFeature,
    OutOfSupportCategory,
    UnparsableNumber,
    MalformedClause,
}

impl InvalidReason {
    pub const ALL: [InvalidReason; 6] = [
        InvalidReason::UnknownFeature,
        InvalidReason::DuplicateFeature,
        InvalidReason::MissingFeature,
        InvalidReason::OutOfSupportCategory,
        InvalidReason::UnparsableNumber,
        InvalidReason::MalformedClause,
    ];
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Valid(Row),
    Invalid(InvalidReason),
}

impl ParseOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, ParseOutcome::Valid(_))
    }
}

fn render_clauses<'a>(clauses: impl Iterator<Item = (&'a str, &'a str)>, out: &mut String) {
    for (i, (f, v)) in clauses.enumerate() {
        if i > 0 {
            out.push_str(DELIMITER);
        }
        out.push_str(f);
        out.push_str(SEPARATOR);
        out.push_str(v);
    }
}

/// Renders the observed cells of `row` in the order given by `perm`, which
/// indexes the row's observed features (all features when nothing is missing).
pub fn encode(row: &Row, schema: &Schema, perm: &Permutation) -> Result<EncodedRecord, CodecError> {
    let observed: Vec<usize> = row.observed().collect();
    if perm.len() != observed.len() || row.cells.len() != schema.len() {
        return Err(CodecError::BadPermutation { expected: observed.len() });
    }
    let clauses: Vec<Clause> = perm
        .indices()
        .iter()
        .map(|&k| {
            let j = observed[k];
            Clause::new(schema.features[j].name.clone(), row.cells[j].clone())
        })
        .collect();
    let mut text = String::new();
    render_clauses(clauses.iter().map(|c| (c.feature.as_str(), c.value.as_str())), &mut text);
    if !clauses.is_empty() {
        text.push_str(TERMINATOR);
    }
    Ok(EncodedRecord { clauses, text })
}

/// Prompt prefix for conditional generation: the constraints in the given
/// order, then an open `"<trailing> is"` clause if a trailing feature is given.
/// Without a trailing feature the prompt ends after the last constraint's comma.
pub fn render_condition(
    schema: &Schema,
    constraints: &[Clause],
    trailing_feature: Option<&str>,
) -> Result<String, CodecError> {
    let mut seen = BTreeSet::new();
    for name in constraints.iter().map(|c| c.feature.as_str()).chain(trailing_feature) {
        if schema.index_of(name).is_none() {
            return Err(CodecError::UnknownFeature(name.to_string()));
        }
        if !seen.insert(name) {
            return Err(CodecError::DuplicateFeature(name.to_string()));
        }
    }
    let mut out = String::new();
    render_clauses(constraints.iter().map(|c| (c.feature.as_str(), c.value.as_str())), &mut out);
    match trailing_feature {
        Some(f) => {
            if !constraints.is_empty() {
                out.push_str(DELIMITER);
            }
            out.push_str(f);
            out.push_str(SEPARATOR.trim_end());
        }
        None if !constraints.is_empty() => out.push_str(TERMINATOR),
        None => {}
    }
    Ok(out)
}

/// Regex-driven parser bound to one schema.
#[derive(Debug, Clone)]
pub struct Decoder {
    schema: Schema,
    boundary: Regex,
    head: Regex,
    loose_head: Regex,
}

impl Decoder {
    pub fn new(schema: &Schema) -> Self {
        let mut names: Vec<&str> = schema.names().collect();
        names.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alternation = names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|");
        let boundary = Regex::new(&format!(", (?:{alternation}) is ")).expect("escaped names");
        let head = Regex::new(&format!("^({alternation}) is ")).expect("escaped names");
        let loose_head = Regex::new("(?s)^.+? is ").expect("static pattern");
        Decoder { schema: schema.clone(), boundary, head, loose_head }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn decode(&self, text: &str) -> ParseOutcome {
        match self.decode_inner(text) {
            Ok(row) => ParseOutcome::Valid(row),
            Err(reason) => ParseOutcome::Invalid(reason),
        }
    }

    fn decode_inner(&self, text: &str) -> Result<Row, InvalidReason> {
        use InvalidReason::*;
        let body = text.strip_suffix(TERMINATOR).ok_or(MalformedClause)?;
        let mut starts = vec![0];
        starts.extend(self.boundary.find_iter(body).map(|m| m.start() + DELIMITER.len()));
        let mut cells: Vec<Option<String>> = vec![None; self.schema.len()];
        for (i, &start) in starts.iter().enumerate() {
            let end = starts.get(i + 1).map_or(body.len(), |&s| s - DELIMITER.len());
            let piece = &body[start..end];
            let Some(head) = self.head.captures(piece) else {
                return Err(if self.loose_head.is_match(piece) { UnknownFeature } else { MalformedClause });
            };
            let name = head.get(1).map_or("", |m| m.as_str());
            let value = &piece[head.get(0).map_or(0, |m| m.end())..];
            if value.is_empty() {
                return Err(MalformedClause);
            }
            if let Some((_, rest)) = value.split_once(DELIMITER) {
                // a clause with an unrecognised name was absorbed into this value
                return Err(if self.loose_head.is_match(rest) { UnknownFeature } else { MalformedClause });
            }
            if check_value(value).is_err() {
                return Err(MalformedClause);
            }
            let j = self.schema.index_of(name).ok_or(UnknownFeature)?;
            if cells[j].is_some() {
                return Err(DuplicateFeature);
            }
            match self.schema.kind(j) {
                FeatureKind::Categorical => {
                    let support = self.schema.support(name).ok_or(OutOfSupportCategory)?;
                    if !support.contains(value) {
                        return Err(OutOfSupportCategory);
                    }
                }
                FeatureKind::Numeric => {
                    if parse_decimal(value).is_none() {
                        return Err(UnparsableNumber);
                    }
                }
            }
            cells[j] = Some(value.to_string());
        }
        cells.into_iter().collect::<Option<Vec<_>>>().map(Row::new).ok_or(MissingFeature)
    }
}

/// One-shot convenience around [`Decoder`].
pub fn decode(text: &str, schema: &Schema) -> ParseOutcome {
    Decoder::new(schema).decode(text)
}
