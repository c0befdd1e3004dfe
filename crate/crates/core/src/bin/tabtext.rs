//! Command-line front end: train, sample, impute, evaluate, bench-gen.
//!
//! Logs go to stdout as JSON lines, diagnostics to stderr. Exit codes: 0 ok,
//! 2 configuration or schema problem, 3 training abort, 4 sampling budget.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tabtext::bench::{self, BenchError, GeneratorSpec};
use tabtext::eval::{
    dcr_histogram, dcr_parallel, discriminator, joint_histogram, likelihood_fitness, mle, DiscriminatorOptions,
    EvalError, EvalMeta, EvalReport, MleOptions, DISCRIMINATOR_MIN_ROWS,
};
use tabtext::lm::{self, LmError, TrainEvent};
use tabtext::sampler::{self, SampleError};
use tabtext::table::{self, CsvOptions, Table, TableError};
use tabtext::{rng, Clause, FeatureKind, LmConfig, SampleMode, SampleSpec, TrainConfig};

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl Display) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

impl From<TableError> for Failure {
    fn from(e: TableError) -> Self {
        Failure::config(e)
    }
}

impl From<LmError> for Failure {
    fn from(e: LmError) -> Self {
        let code = if matches!(e, LmError::NonFiniteLoss { .. }) { 3 } else { 2 };
        Failure { code, message: e.to_string() }
    }
}

impl From<SampleError> for Failure {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::AttemptBudgetExhausted { .. } => Failure { code: 4, message: e.to_string() },
            SampleError::Lm(e) => e.into(),
            e => Failure::config(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::config(e)
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum Metric {
    Mle,
    Dcr,
    Discriminator,
    Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    /// Run all metrics that apply to the schema when absent.
    metrics: Option<Vec<Metric>>,
    /// MLE target; the last column when absent.
    target: Option<String>,
    seeds: Vec<u64>,
    components: usize,
    normalized_dcr: bool,
    histogram_bins: usize,
    joint_bins: usize,
    mle: MleOptions,
    discriminator: DiscriminatorOptions,
    workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: None,
            target: None,
            seeds: (0..5).collect(),
            components: 3,
            normalized_dcr: false,
            histogram_bins: 20,
            joint_bins: 20,
            mle: MleOptions::default(),
            discriminator: DiscriminatorOptions::default(),
            workers: 1,
        }
    }
}

/// The single config file format shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: LmConfig,
    train: TrainConfig,
    sample: SampleSpec,
    eval: EvalConfig,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn emit(line: Value) {
    println!("{line}");
}

fn header(command: &str, config: Value) {
    emit(json!({ "event": "config", "command": command, "config": config }));
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value");
    fs::write(path, text + "\n").map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// `samples.csv` → `samples.report.json`.
fn report_path(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

#[derive(Parser)]
#[command(
    name = "tabtext",
    version,
    about = "Synthesize tabular data with a small language model trained on rows as text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a tokenizer and model to a CSV table and write a checkpoint.
    Train(TrainArgs),
    /// Draw synthetic rows from a checkpoint.
    Sample(SampleArgs),
    /// Fill the empty cells of a CSV table.
    Impute(ImputeArgs),
    /// Score synthetic rows against real train and test rows.
    Evaluate(EvalArgs),
    /// Write a benchmark table with a known generating distribution.
    BenchGen(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training table (CSV with a header row unless --no-header).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// JSON run config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// The CSV has no header row; features are named col0, col1, ...
    #[arg(long)]
    no_header: bool,
    /// Passes over the table.
    #[arg(long)]
    epochs: Option<usize>,
    /// Records per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak AdamW learning rate.
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    /// Decoupled weight decay on matrices.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Seed for initialization, ordering, permutations and densities.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep clauses in schema order instead of permuting them per record.
    #[arg(long)]
    no_permute: bool,
    /// Plain text files for a language-modelling warm-start before the table.
    #[arg(long)]
    pretrain_corpus: Vec<PathBuf>,
    /// Passes over the warm-start corpus.
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Target vocabulary size, byte tokens included.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Context length in tokens; every record must fit.
    #[arg(long)]
    context_len: Option<usize>,
    /// Transformer blocks.
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads per block.
    #[arg(long)]
    heads: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    d_model: Option<usize>,
    /// Feed-forward width.
    #[arg(long)]
    d_ff: Option<usize>,
    /// Share of rows held out for early stopping.
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Also write the JSON-lines log to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Emit a step line every this many optimizer steps.
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    FeatureName,
    NameValue,
    MultiNameValue,
}

impl From<ModeArg> for SampleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FeatureName => SampleMode::FeatureName,
            ModeArg::NameValue => SampleMode::NameValue,
            ModeArg::MultiNameValue => SampleMode::MultiNameValue,
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    ckpt: PathBuf,
    /// Output CSV; the report is written next to it as <stem>.report.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON run config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of valid rows to produce.
    #[arg(long)]
    n: Option<usize>,
    /// Softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Fix a feature, as "feature=value"; repeatable. Implies multi-name-value
    /// prompting unless --mode says otherwise.
    #[arg(long)]
    condition: Vec<String>,
    /// Prompt construction.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Feature used for single-feature prompts instead of a random one.
    #[arg(long)]
    start_feature: Option<String>,
    /// Sampling threads; output is reproducible only with 1.
    #[arg(long)]
    workers: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Generation cap per attempt.
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Attempt budget as a multiple of --n.
    #[arg(long)]
    max_attempts_factor: Option<usize>,
}

#[derive(Args)]
struct ImputeArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    ckpt: PathBuf,
    /// CSV with the checkpoint's header; empty cells are filled.
    #[arg(long)]
    data: PathBuf,
    /// Completed CSV; the report goes to <stem>.report.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON run config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Generation cap per attempt.
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Attempts allowed per incomplete row.
    #[arg(long)]
    max_attempts_factor: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Real training rows (CSV).
    #[arg(long)]
    train: PathBuf,
    /// Real held-out rows (CSV).
    #[arg(long)]
    test: PathBuf,
    /// Synthetic rows (CSV).
    #[arg(long)]
    synthetic: PathBuf,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// JSON run config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of mle,dcr,discriminator,likelihood.
    #[arg(long, value_enum, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Target feature for machine-learning efficiency.
    #[arg(long)]
    target: Option<String>,
    /// First evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    n_seeds: Option<usize>,
    /// Mixture components for likelihood fitness.
    #[arg(long)]
    components: Option<usize>,
    /// Divide numeric DCR differences by the training range.
    #[arg(long)]
    normalized: bool,
    /// Write the DCR distance histogram to this CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Bins of the DCR histogram.
    #[arg(long)]
    histogram_bins: Option<usize>,
    /// Two numeric features for a joint histogram, as "x,y".
    #[arg(long)]
    joint: Option<String>,
    /// Bins per axis of the joint histogram.
    #[arg(long)]
    joint_bins: Option<usize>,
    /// Prefix for the joint histogram CSVs (<prefix>_real.csv, <prefix>_synthetic.csv).
    #[arg(long)]
    joint_out: Option<PathBuf>,
    /// Threads for the DCR search.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Builtin {
    Gmm,
    Markov,
}

#[derive(Args)]
struct BenchArgs {
    /// Generator spec as JSON.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    spec: Option<PathBuf>,
    /// One of the bundled generators.
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    /// Row count, overriding the spec.
    #[arg(long)]
    n: Option<usize>,
    /// Seed, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn read_table(path: &Path, options: CsvOptions) -> Result<Table> {
    table::load_csv(path, options).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let (m, t) = (&mut cfg.model, &mut cfg.train);
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.pretrain_epochs, a.pretrain_epochs);
    set(&mut t.validation_fraction, a.validation_fraction);
    if let Some(seed) = a.seed {
        t.seed = seed;
        m.seed = seed;
    }
    if a.no_permute {
        t.permute = false;
    }
    set(&mut m.vocab_size, a.vocab_size);
    set(&mut m.context_len, a.context_len);
    set(&mut m.n_layers, a.layers);
    set(&mut m.n_heads, a.heads);
    set(&mut m.d_model, a.d_model);
    set(&mut m.d_ff, a.d_ff);
    m.validate()?;
    t.validate()?;
    let options = CsvOptions { has_header: !a.no_header, ..CsvOptions::default() };
    let table = read_table(&a.data, options)?;
    let corpus: Vec<String> = a
        .pretrain_corpus
        .iter()
        .map(|p| fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display()))))
        .collect::<Result<_>>()?;
    let mut log_file = match &a.log {
        Some(p) => Some(fs::File::create(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut log = |line: Value| {
        if let Some(f) = log_file.as_mut() {
            use std::io::Write;
            let _ = writeln!(f, "{line}");
        }
        emit(line);
    };
    log(json!({
        "event": "config",
        "command": "train",
        "config": { "model": &cfg.model, "train": &cfg.train },
        "data": a.data,
        "rows": table.len(),
        "pretrain_corpus": a.pretrain_corpus,
    }));
    let every = a.log_every.max(1);
    let pretrain = (!corpus.is_empty()).then_some(corpus.as_slice());
    let ckpt = lm::train_with_observer(&table, &cfg.model, &cfg.train, pretrain, |ev| {
        if matches!(ev, TrainEvent::Step { step, .. } if step % every != 0) {
            return;
        }
        log(serde_json::to_value(ev).expect("event json"));
    })?;
    lm::save(&ckpt, &a.out)?;
    let final_loss = ckpt.train_log.last().map(|e| e.loss);
    log(json!({
        "event": "done",
        "checkpoint": a.out,
        "steps": ckpt.train_log.len(),
        "final_loss": final_loss,
        "vocab_size": ckpt.config.vocab_size,
    }));
    eprintln!("final loss {}", final_loss.map_or("n/a".into(), |l| format!("{l:.4}")));
    Ok(())
}

fn parse_condition(text: &str) -> Result<Clause> {
    match text.split_once('=') {
        Some((f, v)) if !f.is_empty() => Ok(Clause::new(f, v)),
        _ => Err(Failure::config(format!("condition '{text}' is not of the form feature=value"))),
    }
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let s = &mut cfg.sample;
    set(&mut s.count, a.n);
    set(&mut s.temperature, a.temperature);
    set(&mut s.workers, a.workers);
    set(&mut s.seed, a.seed);
    set(&mut s.max_new_tokens, a.max_new_tokens);
    set(&mut s.max_attempts_factor, a.max_attempts_factor);
    if a.start_feature.is_some() {
        s.start_feature = a.start_feature;
    }
    if !a.condition.is_empty() {
        s.constraints = a.condition.iter().map(|c| parse_condition(c)).collect::<Result<_>>()?;
        if a.mode.is_none() && s.mode == SampleMode::FeatureName {
            s.mode = SampleMode::MultiNameValue;
        }
    }
    if let Some(mode) = a.mode {
        s.mode = mode.into();
    }
    header("sample", json!({ "sample": &cfg.sample, "ckpt": a.ckpt }));
    let ckpt = lm::load(&a.ckpt)?;
    let report = match sampler::sample(&ckpt, &cfg.sample) {
        Ok(r) => r,
        Err(SampleError::AttemptBudgetExhausted { attempts, valid, invalid_reasons }) => {
            emit(json!({
                "event": "budget_exhausted",
                "attempts": attempts,
                "valid": valid,
                "invalid_reasons": invalid_reasons,
            }));
            for (reason, n) in &invalid_reasons {
                eprintln!("{reason:>24} {n}");
            }
            return Err(SampleError::AttemptBudgetExhausted { attempts, valid, invalid_reasons }.into());
        }
        Err(e) => return Err(e.into()),
    };
    report.rows.save_csv(&a.out)?;
    let summary = report.summary();
    write_json(&report_path(&a.out), &summary)?;
    emit(json!({ "event": "done", "out": a.out, "report": summary }));
    Ok(())
}

fn cmd_impute(a: ImputeArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let s = &mut cfg.sample;
    set(&mut s.temperature, a.temperature);
    set(&mut s.seed, a.seed);
    set(&mut s.max_new_tokens, a.max_new_tokens);
    set(&mut s.max_attempts_factor, a.max_attempts_factor);
    header("impute", json!({ "sample": &cfg.sample, "ckpt": a.ckpt, "data": a.data }));
    let ckpt = lm::load(&a.ckpt)?;
    let partial = table::load_csv_with_schema(&a.data, &ckpt.schema)
        .map_err(|e| Failure::config(format!("{}: {e}", a.data.display())))?;
    let report = sampler::impute(&ckpt, &partial, &cfg.sample)?;
    report.table.save_csv(&a.out)?;
    let summary = json!({
        "rows": report.table.len(),
        "filled_rows": partial.rows.iter().filter(|r| r.missing_count() > 0).count(),
        "attempts": report.attempts,
        "invalid": report.invalid,
        "invalid_reasons": report.invalid_reasons,
    });
    write_json(&report_path(&a.out), &summary)?;
    emit(json!({ "event": "done", "out": a.out, "report": summary }));
    Ok(())
}

/// Loads the three evaluation tables under one schema inferred from all of
/// them, so categories present in only one file still load.
fn load_eval_tables(paths: [&Path; 3]) -> Result<[Table; 3]> {
    let mut raws = Vec::new();
    for p in paths {
        let file = fs::File::open(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
        raws.push(table::read_csv_raw(file, CsvOptions::default())?);
    }
    if raws.iter().any(|(names, _)| names != &raws[0].0) {
        return Err(EvalError::SchemaMismatch.into());
    }
    let union: Vec<_> = raws.iter().flat_map(|(_, rows)| rows.iter().cloned()).collect();
    let schema = Table::infer(raws[0].0.clone(), union)?.schema;
    let mut tables = raws.into_iter().map(|(_, rows)| Table::with_schema(schema.clone(), rows));
    Ok([tables.next().unwrap()?, tables.next().unwrap()?, tables.next().unwrap()?])
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let e = &mut cfg.eval;
    if a.metrics.is_some() {
        e.metrics = a.metrics;
    }
    if a.target.is_some() {
        e.target = a.target;
    }
    if a.seed.is_some() || a.n_seeds.is_some() {
        let first = a.seed.unwrap_or_else(|| e.seeds.first().copied().unwrap_or(0));
        let n = a.n_seeds.unwrap_or(e.seeds.len().max(1)) as u64;
        e.seeds = (first..first + n).collect();
    }
    set(&mut e.components, a.components);
    set(&mut e.histogram_bins, a.histogram_bins);
    set(&mut e.joint_bins, a.joint_bins);
    set(&mut e.workers, a.workers);
    if a.normalized {
        e.normalized_dcr = true;
    }
    let config_json = json!({ "eval": &cfg.eval, "train": a.train, "test": a.test, "synthetic": a.synthetic });
    header("evaluate", config_json.clone());
    let e = &cfg.eval;
    let [real_train, real_test, synthetic] = load_eval_tables([&a.train, &a.test, &a.synthetic])?;
    let all_numeric = real_train.schema.features.iter().all(|f| f.kind == FeatureKind::Numeric);
    let metrics = e.metrics.clone().unwrap_or_else(|| {
        let mut m = vec![Metric::Mle, Metric::Dcr, Metric::Discriminator];
        if all_numeric {
            m.push(Metric::Likelihood);
        }
        m
    });
    let seed = e.seeds.first().copied().unwrap_or(0);
    let mut report = EvalReport {
        mle: None,
        dcr: None,
        discriminator: None,
        likelihood: None,
        meta: EvalMeta {
            seeds: e.seeds.clone(),
            config_hash: format!("{:016x}", rng::fnv1a64(config_json.to_string().as_bytes())),
        },
    };
    if metrics.contains(&Metric::Mle) {
        let target = match &e.target {
            Some(t) => t.clone(),
            None => real_train.schema.features.last().expect("non-empty schema").name.clone(),
        };
        report.mle = Some(mle(&real_train, &synthetic, &real_test, &target, &e.seeds, &e.mle)?);
    }
    if metrics.contains(&Metric::Dcr) {
        let d = dcr_parallel(&synthetic, &real_train, e.normalized_dcr, e.workers)?;
        if let Some(path) = &a.histogram {
            let mut w = csv::Writer::from_path(path).map_err(Failure::config)?;
            w.write_record(["lo", "hi", "count"]).map_err(Failure::config)?;
            for (lo, hi, n) in dcr_histogram(&d.distances, e.histogram_bins) {
                w.write_record([lo.to_string(), hi.to_string(), n.to_string()]).map_err(Failure::config)?;
            }
            w.flush()?;
        }
        report.dcr = Some(d);
    }
    if metrics.contains(&Metric::Discriminator) {
        // the synthetic rows are split into a training part and a test part
        // the size of the real test set
        let need = real_test.len() + DISCRIMINATOR_MIN_ROWS;
        if synthetic.len() < need {
            return Err(EvalError::TooFewRows {
                what: "synthetic (discriminator)",
                found: synthetic.len(),
                needed: need,
            }
            .into());
        }
        let mut idx: Vec<usize> = (0..synthetic.len()).collect();
        idx.shuffle(&mut rng::stream(seed, "eval-split"));
        let (test_idx, train_idx) = idx.split_at(real_test.len());
        let (syn_train, syn_test) = (synthetic.select(train_idx), synthetic.select(test_idx));
        report.discriminator =
            Some(discriminator(&real_train, &syn_train, &real_test, &syn_test, &e.seeds, &e.discriminator)?);
    }
    if metrics.contains(&Metric::Likelihood) {
        report.likelihood = Some(likelihood_fitness(&real_train, &real_test, &synthetic, e.components, seed)?);
    }
    if let Some(pair) = &a.joint {
        let (fx, fy) = pair
            .split_once(',')
            .ok_or_else(|| Failure::config(format!("--joint expects two features as x,y, got '{pair}'")))?;
        let hists = joint_histogram(&[&real_train, &synthetic], fx, fy, e.joint_bins)?;
        let prefix = a.joint_out.clone().unwrap_or_else(|| a.out.with_extension("joint"));
        for (h, name) in hists.iter().zip(["real", "synthetic"]) {
            let path = PathBuf::from(format!("{}_{name}.csv", prefix.display()));
            h.write_csv(fs::File::create(&path)?)?;
        }
    }
    let value = serde_json::to_value(&report).expect("report json");
    write_json(&a.out, &value)?;
    emit(json!({ "event": "done", "out": a.out, "report": value }));
    print_summary(&report);
    Ok(())
}

fn print_summary(r: &EvalReport) {
    eprintln!("{:<36} {:>10} {:>10}", "metric", "mean", "std");
    if let Some(m) = &r.mle {
        for (side, res) in [("synthetic", &m.synthetic), ("real", &m.real)] {
            for model in &res.models {
                for (name, s) in &model.metrics {
                    eprintln!("{:<36} {:>10.4} {:>10.4}", format!("mle/{side}/{}/{name}", model.model), s.mean, s.std);
                }
            }
        }
    }
    if let Some(d) = &r.dcr {
        eprintln!("{:<36} {:>10.4}", "dcr/mean", d.mean);
        eprintln!("{:<36} {:>10.4}", "dcr/median", d.median);
        eprintln!("{:<36} {:>10.4}", "dcr/zero_fraction", d.zero_fraction);
    }
    if let Some(d) = &r.discriminator {
        eprintln!("{:<36} {:>10.4} {:>10.4}", "discriminator/accuracy", d.accuracy.mean, d.accuracy.std);
    }
    if let Some(l) = &r.likelihood {
        eprintln!("{:<36} {:>10.4}", "likelihood/l_syn", l.l_syn);
        eprintln!("{:<36} {:>10.4}", "likelihood/l_test", l.l_test);
    }
}

fn cmd_bench_gen(a: BenchArgs) -> Result<()> {
    let mut spec: GeneratorSpec = match (&a.spec, a.builtin) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        (None, Some(Builtin::Gmm)) => bench::gmm_benchmark(),
        (None, Some(Builtin::Markov)) => bench::markov_benchmark(),
        (None, None) => return Err(Failure::config("either --spec or --builtin is required")),
    };
    set(&mut spec.n_rows, a.n);
    set(&mut spec.seed, a.seed);
    header("bench-gen", json!({ "spec": &spec }));
    let table = bench::generate(&spec)?;
    table.save_csv(&a.out)?;
    emit(json!({
        "event": "done",
        "out": a.out,
        "rows": table.len(),
        "true_loglik": bench::true_loglik(&spec, &table)?,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::BenchGen(a) => cmd_bench_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
