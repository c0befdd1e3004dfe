use rand::seq::SliceRandom;
use rand::Rng;

use super::checkpoint::{Checkpoint, LogEntry};
use super::model::{batch_loss, loss_and_gradients, Batch};
use super::optim::{clip_grad_norm, AdamW};
use super::params::LmParams;
use super::{LmConfig, LmError, LrSchedule, Result, TrainConfig};
use crate::codec::{encode, sample_permutation, Permutation};
use crate::density::FeatureDensity;
use crate::rng;
use crate::table::Table;
use crate::tokenizer::{train_bpe, Vocabulary, EOR};

/// Progress notifications from [`train_with_observer`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    Step { phase: &'static str, epoch: usize, step: usize, loss: f64, lr: f64 },
    Epoch { phase: &'static str, epoch: usize, mean_loss: f64, val_loss: Option<f64> },
    EarlyStop { epoch: usize, best_val_loss: f64 },
}

/// Renders the given rows as record texts, each with a fresh random clause
/// order when `permute` is set and in schema order otherwise.
pub fn encode_corpus<R: Rng + ?Sized>(
    table: &Table,
    rows: &[usize],
    permute: bool,
    rng: &mut R,
) -> Result<Vec<String>> {
    rows.iter()
        .map(|&i| {
            let row = &table.rows[i];
            let m = row.cells.len() - row.missing_count();
            let perm = if permute { sample_permutation(m, rng) } else { Permutation::identity(m) };
            Ok(encode(row, &table.schema, &perm)?.text)
        })
        .collect()
}

fn record_tokens(vocab: &Vocabulary, text: &str) -> Vec<u32> {
    let mut ids = vocab.tokenize(text).ids;
    ids.push(EOR);
    ids
}

struct Trainer<'a> {
    config: &'a LmConfig,
    tc: &'a TrainConfig,
    params: LmParams<f32>,
    opt: AdamW,
    dropout_rng: rng::Rng,
    step: usize,
    planned_steps: usize,
    log: Vec<LogEntry>,
}

impl Trainer<'_> {
    fn lr(&self) -> f64 {
        match self.tc.lr_schedule {
            LrSchedule::Constant => self.tc.learning_rate,
            LrSchedule::Linear => {
                let left = self.planned_steps.saturating_sub(self.step) as f64;
                self.tc.learning_rate * left / self.planned_steps.max(1) as f64
            }
        }
    }

    fn update(&mut self, seqs: &[&[u32]]) -> Result<f64> {
        let batch = Batch::new(seqs, self.config)?;
        let rng: &mut dyn rand::RngCore = &mut self.dropout_rng;
        let (loss, mut grad) = loss_and_gradients(&self.params, self.config, &batch, Some(rng))?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(LmError::NonFiniteLoss { step: self.step });
        }
        if let Some(c) = self.tc.grad_clip {
            clip_grad_norm(&mut grad.data, c);
        }
        let lr = self.lr();
        self.opt.step(&mut self.params, &grad.data, lr, self.tc);
        self.log.push(LogEntry { step: self.step, loss });
        self.step += 1;
        Ok(lr)
    }

    fn eval_loss(&self, seqs: &[Vec<u32>]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for chunk in seqs.chunks(self.tc.batch_size) {
            let refs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            let batch = Batch::new(&refs, self.config)?;
            total += batch_loss(&self.params, self.config, &batch) * chunk.len() as f64;
            n += chunk.len();
        }
        Ok(total / n.max(1) as f64)
    }
}

/// [`train_with_observer`] without pretraining or progress reporting.
pub fn train(table: &Table, lm_config: &LmConfig, train_config: &TrainConfig) -> Result<Checkpoint> {
    train_with_observer(table, lm_config, train_config, None, |_| {})
}

/// Fits a vocabulary and a model to `table`.
///
/// The vocabulary is trained on the schema-order rendering of every row with
/// `lm_config.vocab_size` as its target; the returned configuration records
/// the size actually reached. When `pretrain_texts` is given, the model first
/// runs `pretrain_epochs` passes of plain language modelling over those texts
/// (split into context-sized pieces) before training on the table.
pub fn train_with_observer(
    table: &Table,
    lm_config: &LmConfig,
    tc: &TrainConfig,
    pretrain_texts: Option<&[String]>,
    mut observer: impl FnMut(&TrainEvent),
) -> Result<Checkpoint> {
    lm_config.validate()?;
    tc.validate()?;
    table.validate()?;
    if table.is_empty() {
        return Err(crate::table::TableError::EmptyTable.into());
    }
    let all: Vec<usize> = (0..table.len()).collect();
    let plain = encode_corpus(table, &all, false, &mut rng::stream(tc.seed, "identity"))?;
    let vocab = train_bpe(&plain, lm_config.vocab_size)?;
    let density = FeatureDensity::fit(table, rng::derive_seed(tc.seed, "density"))?;
    let config = LmConfig { vocab_size: vocab.len(), ..lm_config.clone() };
    for (i, text) in plain.iter().enumerate() {
        let len = record_tokens(&vocab, text).len();
        if len > config.context_len {
            return Err(LmError::ContextOverflow { len, max: config.context_len, row: Some(i) });
        }
    }

    let mut rows = all;
    let mut val_rows = Vec::new();
    if tc.validation_fraction > 0.0 && table.len() >= 2 {
        rows.shuffle(&mut rng::stream(tc.seed, "validation"));
        let k = ((tc.validation_fraction * table.len() as f64).round() as usize).clamp(1, table.len() - 1);
        val_rows = rows.split_off(table.len() - k);
        rows.sort_unstable();
    }
    let val_seqs: Vec<Vec<u32>> =
        encode_corpus(table, &val_rows, tc.permute, &mut rng::stream(tc.seed, "validation-order"))?
            .iter()
            .map(|t| record_tokens(&vocab, t))
            .collect();

    let pretrain_seqs: Vec<Vec<u32>> = pretrain_texts
        .unwrap_or_default()
        .iter()
        .flat_map(|text| {
            let ids = vocab.tokenize(text).ids;
            ids.chunks(config.context_len).filter(|c| c.len() >= 2).map(<[u32]>::to_vec).collect::<Vec<_>>()
        })
        .collect();
    let pretrain_epochs = if pretrain_seqs.is_empty() { 0 } else { tc.pretrain_epochs };
    let per_epoch = |n: usize| n.div_ceil(tc.batch_size);
    let planned_steps = pretrain_epochs * per_epoch(pretrain_seqs.len()) + tc.epochs * per_epoch(rows.len());

    let params = LmParams::<f32>::init(&config, &mut rng::stream(config.seed, "init"));
    let mut tr = Trainer {
        config: &config,
        tc,
        opt: AdamW::new(&params),
        params,
        dropout_rng: rng::stream(tc.seed, "dropout"),
        step: 0,
        planned_steps,
        log: Vec::new(),
    };

    let mut order_rng = rng::stream(tc.seed, "order");
    let mut perm_rng = rng::stream(tc.seed, "permutation");

    for epoch in 0..pretrain_epochs {
        let mut order: Vec<usize> = (0..pretrain_seqs.len()).collect();
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| pretrain_seqs[i].as_slice()).collect();
            let lr = tr.update(&seqs)?;
            let loss = tr.log.last().map_or(f64::NAN, |e| e.loss);
            sum += loss;
            observer(&TrainEvent::Step { phase: "pretrain", epoch, step: tr.step - 1, loss, lr });
        }
        let mean_loss = sum / per_epoch(order.len()).max(1) as f64;
        observer(&TrainEvent::Epoch { phase: "pretrain", epoch, mean_loss, val_loss: None });
    }

    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..tc.epochs {
        let mut order = rows.clone();
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let texts = encode_corpus(table, chunk, tc.permute, &mut perm_rng)?;
            let seqs: Vec<Vec<u32>> = texts.iter().map(|t| record_tokens(&vocab, t)).collect();
            for (s, &row) in seqs.iter().zip(chunk) {
                if s.len() > config.context_len {
                    return Err(LmError::ContextOverflow { len: s.len(), max: config.context_len, row: Some(row) });
                }
            }
            let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
            let lr = tr.update(&refs)?;
            let loss = tr.log.last().map_or(f64::NAN, |e| e.loss);
            sum += loss;
            observer(&TrainEvent::Step { phase: "train", epoch, step: tr.step - 1, loss, lr });
        }
        let mean_loss = sum / per_epoch(order.len()).max(1) as f64;
        let val_loss = if val_seqs.is_empty() { None } else { Some(tr.eval_loss(&val_seqs)?) };
        observer(&TrainEvent::Epoch { phase: "train", epoch, mean_loss, val_loss });
        if let Some(v) = val_loss {
            if v < best_val {
                best_val = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= tc.patience.max(1) {
                    observer(&TrainEvent::EarlyStop { epoch, best_val_loss: best_val });
                    break;
                }
            }
        }
    }

    let (params, train_log) = (tr.params, tr.log);
    Ok(Checkpoint { config, params, vocab, schema: table.schema.clone(), density, train_log })
}
