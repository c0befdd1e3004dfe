//! Row generation from a trained checkpoint.
//!
//! Every attempt renders a prompt, lets the model continue it token by token
//! until end-of-record, and parses prompt plus continuation back into a row.
//! Texts that fail to parse, or whose parse does not carry the requested
//! constraint values, are discarded and counted.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{render_condition, Clause, Decoder, ParseOutcome};
use crate::lm::{Checkpoint, DecodeState, LmError};
use crate::rng;
use crate::table::{parse_decimal, FeatureKind, Row, Table};
use crate::tokenizer::{EOR, PAD};

pub use crate::density::{fit_feature_density, DensityEntry, FeatureDensity};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("logits contain a non-finite value")]
    NonFiniteLogits,
    #[error("invalid sampling request: {0}")]
    InvalidSpec(String),
    #[error("constraint {feature}={value} lies outside the schema")]
    ConstraintUnsatisfiable { feature: String, value: String },
    #[error("no density for feature '{0}'")]
    MissingDensity(String),
    #[error(
        "gave up after {attempts} attempts with {valid} valid rows; rejections: {}",
        format_reasons(invalid_reasons)
    )]
    AttemptBudgetExhausted { attempts: usize, valid: usize, invalid_reasons: BTreeMap<String, usize> },
    #[error(transparent)]
    Lm(#[from] LmError),
}

fn format_reasons(reasons: &BTreeMap<String, usize>) -> String {
    reasons.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

pub type Result<T> = std::result::Result<T, SampleError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Prompt is a bare `"<feature> is"`.
    #[default]
    FeatureName,
    /// Prompt is one `"<feature> is <value>,"` clause, the value drawn from the
    /// feature's training marginal unless given as the single constraint.
    NameValue,
    /// Prompt is every constraint clause; the model fills in the rest.
    MultiNameValue,
}

/// Reject label used when a parsed row disagrees with a constraint, which can
/// happen when the continuation extends the last prompt value.
pub const CONSTRAINT_MISMATCH: &str = "ConstraintMismatch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub count: usize,
    pub temperature: f64,
    pub constraints: Vec<Clause>,
    pub mode: SampleMode,
    /// Pins the prompt feature in the single-feature modes; otherwise it is
    /// drawn uniformly per attempt.
    pub start_feature: Option<String>,
    pub max_new_tokens: usize,
    pub max_attempts_factor: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            count: 1,
            temperature: 0.7,
            constraints: Vec::new(),
            mode: SampleMode::FeatureName,
            start_feature: None,
            max_new_tokens: 256,
            max_attempts_factor: 10,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub rows: Table,
    pub attempts: usize,
    pub invalid: usize,
    pub invalid_rate: f64,
    pub invalid_reasons: BTreeMap<String, usize>,
}

impl SampleReport {
    /// Everything but the rows, for writing next to the CSV.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.rows.len(),
            "attempts": self.attempts,
            "invalid": self.invalid,
            "invalid_rate": self.invalid_rate,
            "invalid_reasons": self.invalid_reasons,
        })
    }
}

/// Softmax of `logits / temperature` computed after subtracting the maximum.
pub fn probabilities<F: Copy + Into<f64>>(logits: &[F], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(SampleError::InvalidSpec(format!("temperature {temperature}")));
    }
    let mut m = f64::NEG_INFINITY;
    for &z in logits {
        let z: f64 = z.into();
        if !z.is_finite() {
            return Err(SampleError::NonFiniteLogits);
        }
        m = m.max(z);
    }
    let mut p: Vec<f64> = logits
        .iter()
        .map(|&z| {
            let z: f64 = z.into();
            ((z - m) / temperature).exp()
        })
        .collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    Ok(p)
}

/// Draws one token id from the temperature softmax of `logits`.
pub fn next_token<F: Copy + Into<f64>, R: Rng + ?Sized>(logits: &[F], temperature: f64, rng: &mut R) -> Result<u32> {
    let p = probabilities(logits, temperature)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return Ok(i as u32);
        }
    }
    // rounding left u above the final partial sum
    Ok(p.iter().rposition(|&q| q > 0.0).unwrap_or(0) as u32)
}

enum Attempt {
    Row(Row),
    Rejected(String),
}

struct Generator<'a> {
    ckpt: &'a Checkpoint,
    decoder: Decoder,
    state: DecodeState<'a, f32>,
    temperature: f64,
    max_new_tokens: usize,
}

impl<'a> Generator<'a> {
    fn new(ckpt: &'a Checkpoint, temperature: f64, max_new_tokens: usize) -> Self {
        Generator {
            ckpt,
            decoder: Decoder::new(&ckpt.schema),
            state: DecodeState::new(&ckpt.params, &ckpt.config),
            temperature,
            max_new_tokens,
        }
    }

    fn complete<R: Rng + ?Sized>(&mut self, prompt: &str, rng: &mut R) -> Result<String> {
        let ids = self.ckpt.vocab.tokenize(prompt).ids;
        let context = self.ckpt.config.context_len;
        if ids.len() >= context {
            return Err(LmError::ContextOverflow { len: ids.len() + 1, max: context, row: None }.into());
        }
        self.state.reset();
        let mut logits = self.state.feed(&ids)?.to_vec();
        let mut generated = Vec::new();
        for _ in 0..self.max_new_tokens {
            let tok = next_token(&logits, self.temperature, rng)?;
            if tok == EOR || tok == PAD {
                if tok == PAD {
                    generated.push(tok);
                }
                break;
            }
            generated.push(tok);
            if self.state.position() >= context {
                break;
            }
            logits.copy_from_slice(self.state.step(tok)?);
        }
        // an undecodable continuation (special id, broken UTF-8) yields a
        // string the parser rejects as malformed
        let tail = self.ckpt.vocab.detokenize(&generated).unwrap_or_else(|_| "\n".into());
        Ok(format!("{prompt}{tail}"))
    }

    fn attempt<R: Rng + ?Sized>(&mut self, prompt: &str, constraints: &[Clause], rng: &mut R) -> Result<Attempt> {
        let text = self.complete(prompt, rng)?;
        Ok(match self.decoder.decode(&text) {
            ParseOutcome::Invalid(reason) => Attempt::Rejected(reason.to_string()),
            ParseOutcome::Valid(row) => {
                let schema = &self.ckpt.schema;
                let ok =
                    constraints.iter().all(|c| schema.index_of(&c.feature).is_some_and(|j| row.cells[j] == c.value));
                if ok {
                    Attempt::Row(row)
                } else {
                    Attempt::Rejected(CONSTRAINT_MISMATCH.to_string())
                }
            }
        })
    }
}

fn check_constraints(ckpt: &Checkpoint, constraints: &[Clause]) -> Result<()> {
    let schema = &ckpt.schema;
    let mut seen = std::collections::BTreeSet::new();
    for c in constraints {
        let j = schema
            .index_of(&c.feature)
            .ok_or_else(|| SampleError::InvalidSpec(format!("unknown feature '{}'", c.feature)))?;
        if !seen.insert(c.feature.as_str()) {
            return Err(SampleError::InvalidSpec(format!("feature '{}' constrained twice", c.feature)));
        }
        let ok = crate::table::check_value(&c.value).is_ok()
            && match schema.kind(j) {
                FeatureKind::Categorical => schema.support(&c.feature).is_some_and(|s| s.contains(&c.value)),
                FeatureKind::Numeric => parse_decimal(&c.value).is_some(),
            };
        if !ok {
            return Err(SampleError::ConstraintUnsatisfiable { feature: c.feature.clone(), value: c.value.clone() });
        }
    }
    Ok(())
}

fn check_spec(ckpt: &Checkpoint, spec: &SampleSpec) -> Result<()> {
    if spec.count == 0 {
        return Err(SampleError::InvalidSpec("count must be at least 1".into()));
    }
    if !(spec.temperature > 0.0) || !spec.temperature.is_finite() {
        return Err(SampleError::InvalidSpec(format!("temperature {} must be positive", spec.temperature)));
    }
    if spec.max_attempts_factor == 0 || spec.max_new_tokens == 0 {
        return Err(SampleError::InvalidSpec("attempt and token caps must be positive".into()));
    }
    if let Some(f) = &spec.start_feature {
        if ckpt.schema.index_of(f).is_none() {
            return Err(SampleError::InvalidSpec(format!("unknown start feature '{f}'")));
        }
    }
    check_constraints(ckpt, &spec.constraints)?;
    match spec.mode {
        SampleMode::FeatureName if !spec.constraints.is_empty() => {
            Err(SampleError::InvalidSpec("feature-name mode takes no constraints".into()))
        }
        SampleMode::NameValue if spec.constraints.len() > 1 => {
            Err(SampleError::InvalidSpec("name-value mode takes at most one constraint".into()))
        }
        SampleMode::MultiNameValue if spec.constraints.is_empty() => {
            Err(SampleError::InvalidSpec("multi name-value mode needs constraints".into()))
        }
        _ => Ok(()),
    }
}

/// Builds the prompt for one attempt and the constraints its row must carry.
fn prompt_for<R: Rng + ?Sized>(ckpt: &Checkpoint, spec: &SampleSpec, rng: &mut R) -> Result<(String, Vec<Clause>)> {
    let schema = &ckpt.schema;
    let pick_feature = |rng: &mut R| -> String {
        spec.start_feature.clone().unwrap_or_else(|| schema.features[rng.gen_range(0..schema.len())].name.clone())
    };
    let codec_err = |e: crate::codec::CodecError| SampleError::InvalidSpec(e.to_string());
    match spec.mode {
        SampleMode::FeatureName => {
            let f = pick_feature(rng);
            Ok((render_condition(schema, &[], Some(&f)).map_err(codec_err)?, Vec::new()))
        }
        SampleMode::NameValue => {
            let clause = match spec.constraints.first() {
                Some(c) => c.clone(),
                None => {
                    let f = pick_feature(rng);
                    let entry = ckpt.density.get(&f).ok_or_else(|| SampleError::MissingDensity(f.clone()))?;
                    Clause::new(f, entry.draw(rng))
                }
            };
            let prompt = render_condition(schema, std::slice::from_ref(&clause), None).map_err(codec_err)?;
            Ok((prompt, vec![clause]))
        }
        SampleMode::MultiNameValue => {
            Ok((render_condition(schema, &spec.constraints, None).map_err(codec_err)?, spec.constraints.clone()))
        }
    }
}

struct WorkerResult {
    rows: Vec<Row>,
    attempts: usize,
    reasons: BTreeMap<String, usize>,
}

fn run_worker(ckpt: &Checkpoint, spec: &SampleSpec, quota: usize, mut rng: rng::Rng) -> Result<WorkerResult> {
    let mut gen = Generator::new(ckpt, spec.temperature, spec.max_new_tokens);
    let budget = quota * spec.max_attempts_factor;
    let mut out = WorkerResult { rows: Vec::with_capacity(quota), attempts: 0, reasons: BTreeMap::new() };
    while out.rows.len() < quota && out.attempts < budget {
        let (prompt, constraints) = prompt_for(ckpt, spec, &mut rng)?;
        out.attempts += 1;
        match gen.attempt(&prompt, &constraints, &mut rng)? {
            Attempt::Row(row) => out.rows.push(row),
            Attempt::Rejected(reason) => *out.reasons.entry(reason).or_default() += 1,
        }
    }
    Ok(out)
}

/// Generates `spec.count` valid rows.
///
/// With one worker the result is a pure function of the checkpoint and the
/// spec. With several, each worker owns its own random stream and a share of
/// the rows, and results are concatenated in worker order.
pub fn sample(ckpt: &Checkpoint, spec: &SampleSpec) -> Result<SampleReport> {
    check_spec(ckpt, spec)?;
    let workers = spec.workers.clamp(1, spec.count);
    let results: Vec<Result<WorkerResult>> = if workers == 1 {
        vec![run_worker(ckpt, spec, spec.count, rng::stream(spec.seed, "sample"))]
    } else {
        let base = rng::derive_seed(spec.seed, "sample");
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|i| {
                    let quota = spec.count / workers + usize::from(i < spec.count % workers);
                    let stream = rng::stream(base, &format!("worker-{i}"));
                    s.spawn(move || run_worker(ckpt, spec, quota, stream))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect()
        })
    };
    let mut rows = Vec::with_capacity(spec.count);
    let mut attempts = 0;
    let mut invalid_reasons: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        let r = r?;
        rows.extend(r.rows);
        attempts += r.attempts;
        for (k, v) in r.reasons {
            *invalid_reasons.entry(k).or_default() += v;
        }
    }
    let invalid = attempts - rows.len();
    if rows.len() < spec.count {
        return Err(SampleError::AttemptBudgetExhausted { attempts, valid: rows.len(), invalid_reasons });
    }
    Ok(SampleReport {
        rows: Table { schema: ckpt.schema.clone(), rows, target_feature: None },
        attempts,
        invalid,
        invalid_rate: invalid as f64 / attempts as f64,
        invalid_reasons,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeReport {
    pub table: Table,
    pub attempts: usize,
    pub invalid: usize,
    pub invalid_reasons: BTreeMap<String, usize>,
}

/// Fills the missing cells of `partial`. Each incomplete row's observed cells
/// become constraints in a fresh random order; complete rows are copied.
/// Uses `temperature`, `max_new_tokens`, `max_attempts_factor` (per row) and
/// `seed` from `spec`.
pub fn impute(ckpt: &Checkpoint, partial: &Table, spec: &SampleSpec) -> Result<ImputeReport> {
    let names: Vec<&str> = partial.schema.names().collect();
    if names != ckpt.schema.names().collect::<Vec<_>>() {
        return Err(SampleError::InvalidSpec("table columns differ from the checkpoint schema".into()));
    }
    let probe = SampleSpec { mode: SampleMode::FeatureName, constraints: Vec::new(), ..spec.clone() };
    check_spec(ckpt, &probe)?;
    let mut gen = Generator::new(ckpt, spec.temperature, spec.max_new_tokens);
    let mut rng = rng::stream(spec.seed, "impute");
    let mut report = ImputeReport {
        table: Table {
            schema: ckpt.schema.clone(),
            rows: Vec::with_capacity(partial.len()),
            target_feature: partial.target_feature.clone(),
        },
        attempts: 0,
        invalid: 0,
        invalid_reasons: BTreeMap::new(),
    };
    for (i, row) in partial.rows.iter().enumerate() {
        if row.missing_count() == 0 {
            report.table.rows.push(row.clone());
            continue;
        }
        let mut observed: Vec<usize> = row.observed().collect();
        if observed.is_empty() {
            return Err(SampleError::InvalidSpec(format!("row {i} has no observed cell")));
        }
        observed.shuffle(&mut rng);
        let constraints: Vec<Clause> = observed.iter().map(|&j| Clause::new(names[j], row.cells[j].clone())).collect();
        check_constraints(ckpt, &constraints)?;
        let prompt =
            render_condition(&ckpt.schema, &constraints, None).map_err(|e| SampleError::InvalidSpec(e.to_string()))?;
        let mut filled = None;
        for _ in 0..spec.max_attempts_factor {
            report.attempts += 1;
            match gen.attempt(&prompt, &constraints, &mut rng)? {
                Attempt::Row(r) => {
                    filled = Some(r);
                    break;
                }
                Attempt::Rejected(reason) => {
                    report.invalid += 1;
                    *report.invalid_reasons.entry(reason).or_default() += 1;
                }
            }
        }
        let Some(done) = filled else {
            return Err(SampleError::AttemptBudgetExhausted {
                attempts: report.attempts,
                valid: i,
                invalid_reasons: report.invalid_reasons,
            });
        };
        let mut out = row.clone();
        for (j, cell) in out.cells.iter_mut().enumerate() {
            if cell.is_empty() {
                *cell = done.cells[j].clone();
            }
        }
        report.table.rows.push(out);
    }
    Ok(report)
}
