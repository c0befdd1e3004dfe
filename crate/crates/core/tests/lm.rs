use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabtext::lm::{
    self, encode_corpus, forward, gradients, loss_and_gradients, nll, AdamW, Batch, DecodeState, LmError, LrSchedule,
};
use tabtext::table::{Row, Table};
use tabtext::tokenizer::EOR;
use tabtext::{LmConfig, LmParams, TrainConfig};

fn random_params(cfg: &LmConfig, scale: f64, seed: u64) -> LmParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LmParams::<f64>::zeros(cfg);
    for x in &mut p.data {
        *x = rng.gen_range(-scale..scale);
    }
    // keep layer-norm gains away from zero
    for t in p.layout.tensors.clone() {
        if t.name.ends_with(".g") {
            for x in &mut p.data[t.range()] {
                *x += 1.0;
            }
        }
    }
    p
}

/// Straight-line transcription of the GPT block equations with explicit loops.
fn reference_forward(p: &LmParams<f64>, cfg: &LmConfig, toks: &[u32]) -> Vec<Vec<f64>> {
    let d = cfg.d_model;
    let hd = d / cfg.n_heads;
    let t = |name: &str| p.tensor(name).unwrap().to_vec();
    let ln = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mu = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64;
        x.iter().enumerate().map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
    };
    let matvec = |x: &[f64], w: &[f64], bias: Option<&[f64]>, out: usize| -> Vec<f64> {
        (0..out)
            .map(|j| x.iter().enumerate().map(|(i, v)| v * w[i * out + j]).sum::<f64>() + bias.map_or(0.0, |b| b[j]))
            .collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
    let wte = t("wte");
    let wpe = t("wpe");
    let mut xs: Vec<Vec<f64>> = toks
        .iter()
        .enumerate()
        .map(|(pos, &tok)| (0..d).map(|j| wte[tok as usize * d + j] + wpe[pos * d + j]).collect())
        .collect();
    for l in 0..cfg.n_layers {
        let g = |s: &str| t(&format!("h{l}.{s}"));
        let h: Vec<Vec<f64>> = xs.iter().map(|x| ln(x, &g("ln1.g"), &g("ln1.b"))).collect();
        let qkv: Vec<Vec<f64>> = h.iter().map(|x| matvec(x, &g("attn.qkv.w"), Some(&g("attn.qkv.b")), 3 * d)).collect();
        let mut att = vec![vec![0.0; d]; xs.len()];
        for head in 0..cfg.n_heads {
            for i in 0..xs.len() {
                let q = &qkv[i][head * hd..(head + 1) * hd];
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        let k = &qkv[j][d + head * hd..d + (head + 1) * hd];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let w = (s - m).exp() / z;
                    for c in 0..hd {
                        att[i][head * hd + c] += w * qkv[j][2 * d + head * hd + c];
                    }
                }
            }
        }
        for i in 0..xs.len() {
            let o = matvec(&att[i], &g("attn.proj.w"), Some(&g("attn.proj.b")), d);
            for j in 0..d {
                xs[i][j] += o[j];
            }
            let h2 = ln(&xs[i], &g("ln2.g"), &g("ln2.b"));
            let a: Vec<f64> =
                matvec(&h2, &g("mlp.fc.w"), Some(&g("mlp.fc.b")), cfg.d_ff).into_iter().map(gelu).collect();
            let m = matvec(&a, &g("mlp.proj.w"), Some(&g("mlp.proj.b")), d);
            for j in 0..d {
                xs[i][j] += m[j];
            }
        }
    }
    xs.iter()
        .map(|x| {
            let xf = ln(x, &t("lnf.g"), &t("lnf.b"));
            match p.tensor("lm_head.w") {
                Some(w) => matvec(&xf, w, None, cfg.vocab_size),
                None => (0..cfg.vocab_size).map(|v| (0..d).map(|j| xf[j] * wte[v * d + j]).sum()).collect(),
            }
        })
        .collect()
}

#[test]
fn forward_matches_reference_implementation() {
    for (cfg, seed) in [
        (LmConfig::tiny(), 1),
        (LmConfig { tie_embeddings: false, ..LmConfig::tiny() }, 2),
        (LmConfig { n_layers: 2, n_heads: 2, ..LmConfig::tiny() }, 3),
    ] {
        let p = random_params(&cfg, 0.3, seed);
        let toks = [72u32, 105, 32, 116, 104, 101, 114, 101, 257];
        let got = forward(&p, &cfg, &toks).unwrap();
        let want = reference_forward(&p, &cfg, &toks);
        for (i, row) in want.iter().enumerate() {
            for (v, &w) in row.iter().enumerate() {
                let g = got[i * cfg.vocab_size + v];
                assert!((g - w).abs() < 1e-6, "pos {i} token {v}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn causal_and_normalised() {
    let cfg = LmConfig { n_layers: 2, n_heads: 2, ..LmConfig::tiny() };
    let p = random_params(&cfg, 0.3, 4);
    let base = [10u32, 20, 30, 40, 50, 60];
    let a = forward(&p, &cfg, &base).unwrap();
    let v = cfg.vocab_size;
    for k in 0..base.len() {
        let mut changed = base;
        changed[k] = 200;
        let b = forward(&p, &cfg, &changed).unwrap();
        assert_eq!(a[..k * v], b[..k * v], "positions before {k} must not move");
        assert_ne!(a[k * v..(k + 1) * v], b[k * v..(k + 1) * v]);
    }
    for row in a.chunks(v) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
        let s: f64 = row.iter().map(|x| (x - m).exp() / z).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn zero_output_projection_is_uniform() {
    let cfg = LmConfig { tie_embeddings: false, ..LmConfig::tiny() };
    let mut p = random_params(&cfg, 0.3, 5);
    p.tensor_mut("lm_head.w").unwrap().fill(0.0);
    let logits = forward(&p, &cfg, &[1, 2, 3]).unwrap();
    assert!(logits.iter().all(|&x| x == 0.0));
    let loss = nll(&p, &cfg, &[1, 2, 3]).unwrap();
    assert!((loss - 258f64.ln()).abs() < 1e-12);
}

fn check_batch() -> Vec<Vec<u32>> {
    vec![
        b"Age is 34,".iter().map(|&b| u32::from(b)).chain([EOR]).collect(),
        b"x is a, y is b,".iter().map(|&b| u32::from(b)).chain([EOR]).collect(),
        vec![1, 2, 3],
    ]
}

/// Central differences on random coordinates of every tensor family.
fn gradient_check(cfg: &LmConfig, seed: u64) -> Vec<(String, usize, f64)> {
    let p = random_params(cfg, 0.4, seed);
    let seqs = check_batch();
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let batch = Batch::new(&refs, cfg).unwrap();
    let analytic = gradients(&p, cfg, &refs).unwrap();
    let loss = |q: &LmParams<f64>| loss_and_gradients(q, cfg, &batch, None).unwrap().0;
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut families: Vec<String> = p.layout.tensors.iter().map(|t| t.family().to_string()).collect();
    families.sort();
    families.dedup();
    let mut report = Vec::new();
    for fam in families {
        let coords: Vec<usize> =
            p.layout.tensors.iter().filter(|t| t.family() == fam).flat_map(|t| t.range()).collect();
        let picks: Vec<usize> = if coords.len() <= 200 {
            coords.clone()
        } else {
            (0..200).map(|_| coords[rng.gen_range(0..coords.len())]).collect()
        };
        let mut worst: f64 = 0.0;
        for &i in &picks {
            let mut q = p.clone();
            q.data[i] = p.data[i] + h;
            let up = loss(&q);
            q.data[i] = p.data[i] - h;
            let down = loss(&q);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
        report.push((fam, picks.len(), worst));
    }
    report
}

#[test]
fn gradients_match_finite_differences() {
    for (cfg, seed) in [
        (LmConfig::tiny(), 11),
        (LmConfig { tie_embeddings: false, ..LmConfig::tiny() }, 12),
        (LmConfig { n_layers: 2, n_heads: 2, ..LmConfig::tiny() }, 13),
    ] {
        for (fam, n, worst) in gradient_check(&cfg, seed) {
            assert!(worst < 1e-3, "{fam}: worst relative error {worst:e} over {n} coordinates");
        }
    }
}

#[test]
fn duplicated_batch_leaves_gradient_unchanged() {
    let cfg = LmConfig::tiny();
    let p = random_params(&cfg, 0.3, 21);
    let seqs = check_batch();
    let once: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let twice: Vec<&[u32]> = once.iter().chain(once.iter()).copied().collect();
    let a = gradients(&p, &cfg, &once).unwrap();
    let b = gradients(&p, &cfg, &twice).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() < 1e-12);
    }
    let single = gradients(&p, &cfg, &once[..1]).unwrap();
    let single_twice = gradients(&p, &cfg, &[once[0], once[0]]).unwrap();
    for (x, y) in single.data.iter().zip(&single_twice.data) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_a_one_dimensional_minimum() {
    let cfg = LmConfig::tiny();
    let p = random_params(&cfg, 0.3, 31);
    let seq: Vec<u32> = check_batch().remove(0);
    let i = p.layout.get("lnf.b").unwrap().offset + 3;
    let at = |x: f64| {
        let mut q = p.clone();
        q.data[i] = x;
        q
    };
    let f = |x: f64| nll(&at(x), &cfg, &seq).unwrap();
    // golden-section search along the single coordinate
    let (mut lo, mut hi) = (-20.0, 20.0);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let x = 0.5 * (lo + hi);
    let g = gradients(&at(x), &cfg, &[&seq]).unwrap().data[i];
    assert!(g.abs() < 1e-6, "gradient {g} at minimiser {x}");
}

fn fit_sequences(cfg: &LmConfig, seqs: &[Vec<u32>], steps: usize, lr: f64, seed: u64) -> LmParams<f32> {
    let mut params = LmParams::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut opt = AdamW::new(&params);
    let tc = TrainConfig { learning_rate: lr, lr_schedule: LrSchedule::Constant, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        let batch: Vec<&[u32]> = (0..32).map(|_| seqs[rng.gen_range(0..seqs.len())].as_slice()).collect();
        let b = Batch::new(&batch, cfg).unwrap();
        let (_, g) = loss_and_gradients(&params, cfg, &b, None).unwrap();
        opt.step(&mut params, &g.data, lr, &tc);
    }
    params
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let z: f64 = logits.iter().map(|&x| f64::from(x - m).exp()).sum();
    logits.iter().map(|&x| f64::from(x - m).exp() / z).collect()
}

#[test]
fn converges_to_bigram_frequency() {
    // corpus "a b" three times as often as "a a": P(b | a) = 0.75 by counting
    let cfg = LmConfig {
        vocab_size: 258,
        context_len: 8,
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        ..LmConfig::default()
    };
    let (a, b) = (97u32, 98u32);
    let seqs: Vec<Vec<u32>> = (0..400).map(|i| if i % 4 == 0 { vec![a, a] } else { vec![a, b] }).collect();
    let counted = seqs.iter().filter(|s| s[1] == b).count() as f64 / seqs.len() as f64;
    assert_eq!(counted, 0.75);
    // full-corpus batches so the optimum is exactly the empirical frequency
    let mut params = LmParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let mut opt = AdamW::new(&params);
    let tc = TrainConfig { learning_rate: 1e-2, lr_schedule: LrSchedule::Constant, ..TrainConfig::default() };
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let batch = Batch::new(&refs, &cfg).unwrap();
    for _ in 0..300 {
        let (_, g) = loss_and_gradients(&params, &cfg, &batch, None).unwrap();
        opt.step(&mut params, &g.data, 1e-2, &tc);
    }
    let probs = softmax(&forward(&params, &cfg, &[a]).unwrap());
    assert!((probs[b as usize] - counted).abs() < 0.02, "p(b|a) = {}", probs[b as usize]);
}

#[test]
fn learns_a_markov_chain() {
    // three-state chain; compare model conditionals with the empirical bigram table
    let cfg = LmConfig {
        vocab_size: 258,
        context_len: 16,
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        ..LmConfig::default()
    };
    let states = [65u32, 66, 67];
    let trans = [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draw = |row: &[f64; 3], rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        2
    };
    let seqs: Vec<Vec<u32>> = (0..2000)
        .map(|_| {
            let mut s = rng.gen_range(0..3);
            let mut out = vec![states[s]];
            for _ in 0..5 {
                s = draw(&trans[s], &mut rng);
                out.push(states[s]);
            }
            out
        })
        .collect();
    let mut counts = [[0.0f64; 3]; 3];
    for s in &seqs {
        for w in s.windows(2) {
            counts[(w[0] - 65) as usize][(w[1] - 65) as usize] += 1.0;
        }
    }
    let params = fit_sequences(&cfg, &seqs, 1500, 3e-3, 2);
    // average the model's next-token distribution over every observed context
    let mut model = [[0.0f64; 3]; 3];
    let mut seen = [0.0f64; 3];
    for s in seqs.iter().take(400) {
        let logits = forward(&params, &cfg, &s[..5]).unwrap();
        for (pos, &tok) in s[..5].iter().enumerate() {
            let p = softmax(&logits[pos * cfg.vocab_size..(pos + 1) * cfg.vocab_size]);
            let prev = (tok - 65) as usize;
            for k in 0..3 {
                model[prev][k] += p[states[k] as usize];
            }
            seen[prev] += 1.0;
        }
    }
    for prev in 0..3 {
        let total: f64 = counts[prev].iter().sum();
        let tv: f64 = (0..3).map(|k| (model[prev][k] / seen[prev] - counts[prev][k] / total).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.05, "state {prev}: total variation {tv}");
    }
}

fn repeated_table(n: usize) -> Table {
    let rows = (0..n).map(|_| Row::new(vec!["doctor".into(), "female".into(), "34".into()])).collect();
    Table::infer(vec!["Occupation".into(), "Gender".into(), "Age".into()], rows).unwrap()
}

fn small_config() -> LmConfig {
    LmConfig { vocab_size: 300, context_len: 48, n_layers: 2, n_heads: 2, d_model: 32, d_ff: 64, ..LmConfig::default() }
}

fn fast_train() -> TrainConfig {
    TrainConfig { epochs: 8, batch_size: 16, learning_rate: 3e-3, ..TrainConfig::default() }
}

#[test]
fn memorises_a_single_record() {
    let table = repeated_table(64);
    let tc = TrainConfig { permute: false, epochs: 100, ..fast_train() };
    let ckpt = lm::train(&table, &small_config(), &tc).unwrap();
    let last = ckpt.train_log.last().unwrap().loss;
    assert!(last < 0.05, "final loss {last}");
    let text = "Occupation is doctor, Gender is female, Age is 34,";
    let mut ids = ckpt.vocab.tokenize(text).ids;
    ids.push(EOR);
    assert!(nll(&ckpt.params, &ckpt.config, &ids).unwrap() < 0.05);
    // greedy continuation of the first token reproduces the record
    let mut st = DecodeState::new(&ckpt.params, &ckpt.config);
    let mut out = vec![ids[0]];
    let mut logits = st.step(ids[0]).unwrap().to_vec();
    while out.len() < ckpt.config.context_len {
        let next = logits.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 as u32;
        out.push(next);
        if next == EOR {
            break;
        }
        logits = st.step(next).unwrap().to_vec();
    }
    assert_eq!(out, ids);
}

#[test]
fn training_is_deterministic_and_logs_a_falling_loss() {
    let rows = (0..40).map(|i| Row::new(vec![["red", "blue"][i % 2].into(), format!("{}", i % 7)])).collect();
    let table = Table::infer(vec!["color".into(), "n".into()], rows).unwrap();
    let tc = TrainConfig { epochs: 30, ..fast_train() };
    let a = lm::train(&table, &small_config(), &tc).unwrap();
    let b = lm::train(&table, &small_config(), &tc).unwrap();
    assert_eq!(a, b);
    let first: f64 = a.train_log[..3].iter().map(|e| e.loss).sum::<f64>() / 3.0;
    let n = a.train_log.len();
    let last: f64 = a.train_log[n - 3..].iter().map(|e| e.loss).sum::<f64>() / 3.0;
    assert!(last < first * 0.5, "{first} -> {last}");
    assert!(a.params.all_finite());
    assert_eq!(a.config.vocab_size, a.vocab.len());
}

#[test]
fn fixed_order_corpus_starts_with_first_feature() {
    let table = repeated_table(10);
    let rows: Vec<usize> = (0..10).collect();
    let texts = encode_corpus(&table, &rows, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(texts.iter().all(|t| t.starts_with("Occupation is ")));
}

#[test]
fn permuted_corpus_covers_all_orders_uniformly() {
    let table = repeated_table(6000);
    let rows: Vec<usize> = (0..6000).collect();
    let texts = encode_corpus(&table, &rows, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut census = std::collections::HashMap::new();
    for t in &texts {
        let order: String = t.split(", ").map(|c| &c[..1]).collect();
        *census.entry(order).or_insert(0usize) += 1;
    }
    assert_eq!(census.len(), 6);
    for (order, n) in census {
        let share = n as f64 / 6000.0;
        assert!((share - 1.0 / 6.0).abs() < 0.02, "{order}: {share}");
    }
}

#[test]
fn default_learning_rate() {
    assert_eq!(TrainConfig::default().learning_rate, 5e-5);
}

#[test]
fn context_overflow_reports_the_row() {
    let rows = vec![
        Row::new(vec!["short".into()]),
        Row::new(vec!["a much much longer value that keeps on going well past the limit".into()]),
    ];
    let table = Table::infer(vec!["v".into()], rows).unwrap();
    let cfg = LmConfig { context_len: 24, ..small_config() };
    match lm::train(&table, &cfg, &fast_train()) {
        Err(LmError::ContextOverflow { row: Some(1), .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_finite_loss_aborts() {
    let table = repeated_table(8);
    let tc = TrainConfig { learning_rate: 1e30, grad_clip: None, lr_schedule: LrSchedule::Constant, ..fast_train() };
    let err = lm::train(&table, &small_config(), &tc).unwrap_err();
    assert!(matches!(err, LmError::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn checkpoint_roundtrip() {
    let table = repeated_table(16);
    let ckpt = lm::train(&table, &small_config(), &TrainConfig { epochs: 2, ..fast_train() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    lm::save(&ckpt, &path).unwrap();
    let back = lm::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert!(back.params.data.iter().zip(&ckpt.params.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    let prompt = ckpt.vocab.tokenize("Occupation is").ids;
    let before = forward(&ckpt.params, &ckpt.config, &prompt).unwrap();
    let after = forward(&back.params, &back.config, &prompt).unwrap();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        let err = lm::read_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, LmError::Io(_) | LmError::VersionMismatch { .. }), "cut {cut}: {err}");
    }
    let key = b"\"format_version\":1";
    let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
    let mut bumped = bytes.clone();
    bumped[at + key.len() - 1] = b'9';
    assert!(matches!(lm::read_checkpoint(&bumped[..]), Err(LmError::VersionMismatch { found: 9, .. })));
}
