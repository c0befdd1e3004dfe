//! Batched forward and backward passes.
//!
//! Activations are row-major `[N, width]` buffers with `N = batch * time`.
//! Each sequence is right-padded with `PAD`; causal attention means real
//! positions never see the padding, and positions whose target is `PAD` carry
//! zero loss weight.

use rand::Rng;

use super::params::{LayerOffsets, LmParams};
use super::scalar::{gemm, Scalar, View, ViewMut};
use super::{LmConfig, LmError, Result};
use crate::tokenizer::PAD;

const LN_EPS: f64 = 1e-5;

/// Padded inputs and targets for a batch of token sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub batch: usize,
    pub time: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// Loss weight of each position: `1 / (targets in sequence * sequences)`.
    pub weights: Vec<f64>,
}

impl Batch {
    /// Position `p` of each sequence predicts token `p + 1`.
    pub fn new(seqs: &[&[u32]], config: &LmConfig) -> Result<Batch> {
        if seqs.is_empty() {
            return Err(LmError::ShapeMismatch("empty batch".into()));
        }
        for s in seqs {
            check_tokens(s, config)?;
        }
        let time = seqs.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0).max(1);
        let b = seqs.len();
        let mut inputs = vec![PAD; b * time];
        let mut targets = vec![PAD; b * time];
        let mut weights = vec![0.0; b * time];
        let counts: Vec<usize> = seqs.iter().map(|s| s.iter().skip(1).filter(|&&t| t != PAD).count()).collect();
        let active = counts.iter().filter(|&&c| c > 0).count();
        for (i, s) in seqs.iter().enumerate() {
            for p in 0..s.len().saturating_sub(1) {
                inputs[i * time + p] = s[p];
                targets[i * time + p] = s[p + 1];
                if s[p + 1] != PAD {
                    weights[i * time + p] = 1.0 / (counts[i] * active) as f64;
                }
            }
        }
        Ok(Batch { batch: b, time, inputs, targets, weights })
    }

    fn rows(&self) -> usize {
        self.batch * self.time
    }
}

fn check_tokens(tokens: &[u32], config: &LmConfig) -> Result<()> {
    if tokens.len() > config.context_len {
        return Err(LmError::ContextOverflow { len: tokens.len(), max: config.context_len, row: None });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(LmError::ShapeMismatch(format!("token id {bad} >= vocab size {}", config.vocab_size)));
    }
    Ok(())
}

fn check_params<F: Scalar>(params: &LmParams<F>, config: &LmConfig) -> Result<()> {
    let expected = super::params::Layout::new(config);
    if params.layout != expected || params.data.len() != expected.total {
        return Err(LmError::ShapeMismatch("parameters do not match the configuration".into()));
    }
    Ok(())
}

pub(crate) fn layer_norm<F: Scalar>(x: &[F], g: &[F], b: &[F], d: usize, y: &mut [F], xhat: &mut [F], rstd: &mut [F]) {
    let eps = F::of(LN_EPS);
    let df = F::of(d as f64);
    for (n, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<F>() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
        let r = (var + eps).sqrt().recip();
        rstd[n] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[n * d + j] = h;
            y[n * d + j] = h * g[j] + b[j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<F: Scalar>(
    dy: &[F],
    xhat: &[F],
    rstd: &[F],
    g: &[F],
    d: usize,
    dx: &mut [F],
    dg: &mut [F],
    db: &mut [F],
) {
    let df = F::of(d as f64);
    let mut dxhat = vec![F::zero(); d];
    for n in 0..rstd.len() {
        let dyr = &dy[n * d..(n + 1) * d];
        let xr = &xhat[n * d..(n + 1) * d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_x = F::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xr[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_x += dxhat[j] * xr[j];
        }
        mean_dxhat /= df;
        mean_dxhat_x /= df;
        for j in 0..d {
            dx[n * d + j] = rstd[n] * (dxhat[j] - mean_dxhat - xr[j] * mean_dxhat_x);
        }
    }
}

pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let c = F::of((2.0 / std::f64::consts::PI).sqrt());
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + F::of(0.044715) * x * x * x)).tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::of((2.0 / std::f64::consts::PI).sqrt());
    let a = F::of(0.044715);
    let half = F::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}

/// `y = x · w + bias` for `x: [n, k]`, `w: [k, m]`.
pub(crate) fn linear<F: Scalar>(x: &[F], w: &[F], bias: &[F], n: usize, k: usize, m: usize, y: &mut [F]) {
    for row in y.chunks_exact_mut(m) {
        row.copy_from_slice(bias);
    }
    gemm(View::new(x, n, k), View::new(w, k, m), F::one(), ViewMut::new(y, n, m));
}

/// Accumulates `dw += xᵀ · dy`, `db += Σ dy` and writes `dx = dy · wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dy: &[F],
    n: usize,
    k: usize,
    m: usize,
    dx: Option<&mut [F]>,
    dw: &mut [F],
    db: &mut [F],
) {
    gemm(View::new(x, n, k).t(), View::new(dy, n, m), F::one(), ViewMut::new(dw, k, m));
    for row in dy.chunks_exact(m) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(dx) = dx {
        gemm(View::new(dy, n, m), View::new(w, k, m).t(), F::zero(), ViewMut::new(dx, n, k));
    }
}

struct AttnShape {
    batch: usize,
    time: usize,
    heads: usize,
    hd: usize,
    d: usize,
}

/// Causal multi-head attention over packed `qkv: [N, 3d]`; returns softmax
/// probabilities `[batch, heads, T, T]` and writes the head outputs to `out`.
fn attention<F: Scalar>(qkv: &[F], s: &AttnShape, out: &mut [F]) -> Vec<F> {
    let (t, hd, d) = (s.time, s.hd, s.d);
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let mut probs = vec![F::zero(); s.batch * s.heads * t * t];
    for b in 0..s.batch {
        let base = b * t * 3 * d;
        for h in 0..s.heads {
            let p = &mut probs[(b * s.heads + h) * t * t..][..t * t];
            let q = View::strided(&qkv[base + h * hd..], t, hd, 3 * d);
            let k = View::strided(&qkv[base + d + h * hd..], t, hd, 3 * d);
            gemm(q, k.t(), F::zero(), ViewMut::new(p, t, t));
            for i in 0..t {
                let row = &mut p[i * t..(i + 1) * t];
                let mut max = F::neg_infinity();
                for v in row[..=i].iter_mut() {
                    *v *= scale;
                    max = max.max(*v);
                }
                let mut sum = F::zero();
                for v in row[..=i].iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row[..=i].iter_mut() {
                    *v /= sum;
                }
                row[i + 1..].fill(F::zero());
            }
            let v = View::strided(&qkv[base + 2 * d + h * hd..], t, hd, 3 * d);
            let o = ViewMut::strided(&mut out[b * t * d + h * hd..], t, hd, d);
            gemm(View::new(p, t, t), v, F::zero(), o);
        }
    }
    probs
}

fn attention_backward<F: Scalar>(dout: &[F], qkv: &[F], probs: &[F], s: &AttnShape, dqkv: &mut [F]) {
    let (t, hd, d) = (s.time, s.hd, s.d);
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let mut dp = vec![F::zero(); t * t];
    for b in 0..s.batch {
        let base = b * t * 3 * d;
        for h in 0..s.heads {
            let p = &probs[(b * s.heads + h) * t * t..][..t * t];
            let dy = View::strided(&dout[b * t * d + h * hd..], t, hd, d);
            let q = View::strided(&qkv[base + h * hd..], t, hd, 3 * d);
            let k = View::strided(&qkv[base + d + h * hd..], t, hd, 3 * d);
            let v = View::strided(&qkv[base + 2 * d + h * hd..], t, hd, 3 * d);
            gemm(
                View::new(p, t, t).t(),
                dy,
                F::zero(),
                ViewMut::strided(&mut dqkv[base + 2 * d + h * hd..], t, hd, 3 * d),
            );
            gemm(dy, v.t(), F::zero(), ViewMut::new(&mut dp, t, t));
            for i in 0..t {
                let pr = &p[i * t..(i + 1) * t];
                let dr = &mut dp[i * t..(i + 1) * t];
                let dot: F = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..t {
                    dr[j] = pr[j] * (dr[j] - dot) * scale;
                }
            }
            gemm(View::new(&dp, t, t), k, F::zero(), ViewMut::strided(&mut dqkv[base + h * hd..], t, hd, 3 * d));
            gemm(
                View::new(&dp, t, t).t(),
                q,
                F::zero(),
                ViewMut::strided(&mut dqkv[base + d + h * hd..], t, hd, 3 * d),
            );
        }
    }
}

struct LayerCache<F> {
    ln1_xhat: Vec<F>,
    ln1_rstd: Vec<F>,
    h1: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    drop_attn: Option<Vec<F>>,
    ln2_xhat: Vec<F>,
    ln2_rstd: Vec<F>,
    h2: Vec<F>,
    fc: Vec<F>,
    act: Vec<F>,
    drop_mlp: Option<Vec<F>>,
}

struct Cache<F> {
    drop_embed: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    lnf_xhat: Vec<F>,
    lnf_rstd: Vec<F>,
    xf: Vec<F>,
    logits: Vec<F>,
}

fn dropout_mask<F: Scalar, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<F> {
    let keep = F::of(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep }).collect()
}

fn apply_mask<F: Scalar>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn run_forward<F: Scalar>(
    params: &LmParams<F>,
    config: &LmConfig,
    batch: &Batch,
    mut dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Cache<F> {
    let lay = &params.layout;
    let w = &params.data;
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let (nb, t) = (batch.batch, batch.time);
    let n = batch.rows();
    let shape = AttnShape { batch: nb, time: t, heads: config.n_heads, hd: config.head_dim(), d };
    let p_drop = config.dropout;
    let mut mask = |len: usize| -> Option<Vec<F>> {
        match dropout_rng.as_deref_mut() {
            Some(rng) if p_drop > 0.0 => Some(dropout_mask(len, p_drop, rng)),
            _ => None,
        }
    };

    let mut x = vec![F::zero(); n * d];
    for (row, (&tok, pos)) in x.chunks_exact_mut(d).zip(batch.inputs.iter().zip((0..t).cycle())) {
        let te = &w[lay.wte + tok as usize * d..][..d];
        let pe = &w[lay.wpe + pos * d..][..d];
        for j in 0..d {
            row[j] = te[j] + pe[j];
        }
    }
    let drop_embed = mask(n * d);
    apply_mask(&mut x, &drop_embed);

    let mut layers = Vec::with_capacity(config.n_layers);
    for o in &lay.layers {
        let x_in = x;
        let mut h1 = vec![F::zero(); n * d];
        let mut ln1_xhat = vec![F::zero(); n * d];
        let mut ln1_rstd = vec![F::zero(); n];
        layer_norm(&x_in, &w[o.ln1_g..][..d], &w[o.ln1_b..][..d], d, &mut h1, &mut ln1_xhat, &mut ln1_rstd);
        let mut qkv = vec![F::zero(); n * 3 * d];
        linear(&h1, &w[o.qkv_w..][..d * 3 * d], &w[o.qkv_b..][..3 * d], n, d, 3 * d, &mut qkv);
        let mut att = vec![F::zero(); n * d];
        let probs = attention(&qkv, &shape, &mut att);
        let mut proj = vec![F::zero(); n * d];
        linear(&att, &w[o.proj_w..][..d * d], &w[o.proj_b..][..d], n, d, d, &mut proj);
        let drop_attn = mask(n * d);
        apply_mask(&mut proj, &drop_attn);
        let x_mid: Vec<F> = x_in.iter().zip(&proj).map(|(&a, &b)| a + b).collect();

        let mut h2 = vec![F::zero(); n * d];
        let mut ln2_xhat = vec![F::zero(); n * d];
        let mut ln2_rstd = vec![F::zero(); n];
        layer_norm(&x_mid, &w[o.ln2_g..][..d], &w[o.ln2_b..][..d], d, &mut h2, &mut ln2_xhat, &mut ln2_rstd);
        let mut fc = vec![F::zero(); n * f];
        linear(&h2, &w[o.fc_w..][..d * f], &w[o.fc_b..][..f], n, d, f, &mut fc);
        let act: Vec<F> = fc.iter().map(|&z| gelu(z)).collect();
        let mut mlp = vec![F::zero(); n * d];
        linear(&act, &w[o.mproj_w..][..f * d], &w[o.mproj_b..][..d], n, f, d, &mut mlp);
        let drop_mlp = mask(n * d);
        apply_mask(&mut mlp, &drop_mlp);
        x = x_mid.iter().zip(&mlp).map(|(&a, &b)| a + b).collect();

        layers.push(LayerCache {
            ln1_xhat,
            ln1_rstd,
            h1,
            qkv,
            probs,
            att,
            drop_attn,
            ln2_xhat,
            ln2_rstd,
            h2,
            fc,
            act,
            drop_mlp,
        });
    }

    let mut xf = vec![F::zero(); n * d];
    let mut lnf_xhat = vec![F::zero(); n * d];
    let mut lnf_rstd = vec![F::zero(); n];
    layer_norm(&x, &w[lay.lnf_g..][..d], &w[lay.lnf_b..][..d], d, &mut xf, &mut lnf_xhat, &mut lnf_rstd);
    let mut logits = vec![F::zero(); n * v];
    let head = match lay.head {
        Some(off) => View::new(&w[off..off + d * v], d, v),
        None => View::new(&w[lay.wte..lay.wte + v * d], v, d).t(),
    };
    gemm(View::new(&xf, n, d), head, F::zero(), ViewMut::new(&mut logits, n, v));
    Cache { drop_embed, layers, lnf_xhat, lnf_rstd, xf, logits }
}

/// Weighted cross-entropy; returns the loss and `d loss / d logits`.
fn cross_entropy<F: Scalar>(logits: &[F], batch: &Batch, v: usize) -> (f64, Vec<F>) {
    let mut loss = 0.0;
    let mut dlogits = vec![F::zero(); logits.len()];
    for (i, row) in logits.chunks_exact(v).enumerate() {
        let weight = batch.weights[i];
        if weight == 0.0 {
            continue;
        }
        let target = batch.targets[i] as usize;
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let sum: F = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += weight * (lse - row[target]).to_f64().unwrap_or(f64::NAN);
        let wf = F::of(weight);
        let drow = &mut dlogits[i * v..(i + 1) * v];
        for (g, &z) in drow.iter_mut().zip(row) {
            *g = (z - lse).exp() * wf;
        }
        drow[target] -= wf;
    }
    (loss, dlogits)
}

fn run_backward<F: Scalar>(
    params: &LmParams<F>,
    config: &LmConfig,
    batch: &Batch,
    cache: &Cache<F>,
    dlogits: &[F],
) -> Vec<F> {
    let lay = &params.layout;
    let w = &params.data;
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let t = batch.time;
    let n = batch.rows();
    let shape = AttnShape { batch: batch.batch, time: t, heads: config.n_heads, hd: config.head_dim(), d };
    let mut grad = vec![F::zero(); lay.total];

    let mut dxf = vec![F::zero(); n * d];
    match lay.head {
        Some(off) => {
            gemm(
                View::new(&cache.xf, n, d).t(),
                View::new(dlogits, n, v),
                F::one(),
                ViewMut::new(&mut grad[off..off + d * v], d, v),
            );
            gemm(
                View::new(dlogits, n, v),
                View::new(&w[off..off + d * v], d, v).t(),
                F::zero(),
                ViewMut::new(&mut dxf, n, d),
            );
        }
        None => {
            gemm(
                View::new(dlogits, n, v).t(),
                View::new(&cache.xf, n, d),
                F::one(),
                ViewMut::new(&mut grad[lay.wte..lay.wte + v * d], v, d),
            );
            gemm(
                View::new(dlogits, n, v),
                View::new(&w[lay.wte..lay.wte + v * d], v, d),
                F::zero(),
                ViewMut::new(&mut dxf, n, d),
            );
        }
    }

    let mut dx = vec![F::zero(); n * d];
    {
        let (dg, db) = two_slices(&mut grad, lay.lnf_g, d, lay.lnf_b, d);
        layer_norm_backward(&dxf, &cache.lnf_xhat, &cache.lnf_rstd, &w[lay.lnf_g..][..d], d, &mut dx, dg, db);
    }

    for (o, c) in lay.layers.iter().zip(&cache.layers).rev() {
        layer_backward(w, &mut grad, o, c, &shape, n, d, f, &mut dx);
    }

    apply_mask(&mut dx, &cache.drop_embed);
    for (row, (&tok, pos)) in dx.chunks_exact(d).zip(batch.inputs.iter().zip((0..t).cycle())) {
        let te = lay.wte + tok as usize * d;
        let pe = lay.wpe + pos * d;
        for j in 0..d {
            grad[te + j] += row[j];
            grad[pe + j] += row[j];
        }
    }
    grad
}

/// Mutable views of the disjoint tensors `[a, a + len_a)` and `[b, b + len_b)`.
fn two_slices<F>(grad: &mut [F], a: usize, len_a: usize, b: usize, len_b: usize) -> (&mut [F], &mut [F]) {
    assert!(a + len_a <= b, "tensors must be ordered and disjoint");
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + len_a], &mut hi[..len_b])
}

/// Back-propagates through one block; `dx` holds d loss / d block output on
/// entry and d loss / d block input on exit.
#[allow(clippy::too_many_arguments)]
fn layer_backward<F: Scalar>(
    w: &[F],
    grad: &mut [F],
    o: &LayerOffsets,
    c: &LayerCache<F>,
    shape: &AttnShape,
    n: usize,
    d: usize,
    f: usize,
    dx: &mut Vec<F>,
) {
    // x_out = x_mid + drop(mlp(ln2(x_mid)))
    let mut dmlp = dx.clone();
    apply_mask(&mut dmlp, &c.drop_mlp);
    let mut dact = vec![F::zero(); n * f];
    {
        let (dw, db) = two_slices(grad, o.mproj_w, f * d, o.mproj_b, d);
        linear_backward(&c.act, &w[o.mproj_w..][..f * d], &dmlp, n, f, d, Some(&mut dact), dw, db);
    }
    for (g, &z) in dact.iter_mut().zip(&c.fc) {
        *g *= gelu_grad(z);
    }
    let mut dh2 = vec![F::zero(); n * d];
    {
        let (dw, db) = two_slices(grad, o.fc_w, d * f, o.fc_b, f);
        linear_backward(&c.h2, &w[o.fc_w..][..d * f], &dact, n, d, f, Some(&mut dh2), dw, db);
    }
    let mut dmid = vec![F::zero(); n * d];
    {
        let (dg, db) = two_slices(grad, o.ln2_g, d, o.ln2_b, d);
        layer_norm_backward(&dh2, &c.ln2_xhat, &c.ln2_rstd, &w[o.ln2_g..][..d], d, &mut dmid, dg, db);
    }
    for (a, &b) in dmid.iter_mut().zip(dx.iter()) {
        *a += b;
    }

    // x_mid = x_in + drop(proj(attn(ln1(x_in))))
    let mut dproj = dmid.clone();
    apply_mask(&mut dproj, &c.drop_attn);
    let mut datt = vec![F::zero(); n * d];
    {
        let (dw, db) = two_slices(grad, o.proj_w, d * d, o.proj_b, d);
        linear_backward(&c.att, &w[o.proj_w..][..d * d], &dproj, n, d, d, Some(&mut datt), dw, db);
    }
    let mut dqkv = vec![F::zero(); n * 3 * d];
    attention_backward(&datt, &c.qkv, &c.probs, shape, &mut dqkv);
    let mut dh1 = vec![F::zero(); n * d];
    {
        let (dw, db) = two_slices(grad, o.qkv_w, d * 3 * d, o.qkv_b, 3 * d);
        linear_backward(&c.h1, &w[o.qkv_w..][..d * 3 * d], &dqkv, n, d, 3 * d, Some(&mut dh1), dw, db);
    }
    let mut din = vec![F::zero(); n * d];
    {
        let (dg, db) = two_slices(grad, o.ln1_g, d, o.ln1_b, d);
        layer_norm_backward(&dh1, &c.ln1_xhat, &c.ln1_rstd, &w[o.ln1_g..][..d], d, &mut din, dg, db);
    }
    for (a, &b) in din.iter_mut().zip(dmid.iter()) {
        *a += b;
    }
    *dx = din;
}

/// Logits `[tokens.len(), vocab_size]` for one sequence, without dropout.
pub fn forward<F: Scalar>(params: &LmParams<F>, config: &LmConfig, tokens: &[u32]) -> Result<Vec<F>> {
    check_params(params, config)?;
    check_tokens(tokens, config)?;
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let batch = Batch {
        batch: 1,
        time: tokens.len(),
        inputs: tokens.to_vec(),
        targets: vec![PAD; tokens.len()],
        weights: vec![0.0; tokens.len()],
    };
    Ok(run_forward(params, config, &batch, None).logits)
}

/// Mean negative log-likelihood of each next token (PAD targets excluded).
pub fn nll<F: Scalar>(params: &LmParams<F>, config: &LmConfig, tokens: &[u32]) -> Result<f64> {
    check_params(params, config)?;
    if tokens.len() < 2 {
        return Err(LmError::ShapeMismatch("need at least two tokens".into()));
    }
    let batch = Batch::new(&[tokens], config)?;
    let cache = run_forward(params, config, &batch, None);
    Ok(cross_entropy(&cache.logits, &batch, config.vocab_size).0)
}

/// Mean over sequences of the per-sequence NLL, and its exact gradient.
/// Dropout is active only when an rng is supplied.
pub fn loss_and_gradients<F: Scalar>(
    params: &LmParams<F>,
    config: &LmConfig,
    batch: &Batch,
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, LmParams<F>)> {
    check_params(params, config)?;
    let cache = run_forward(params, config, batch, dropout_rng);
    let (loss, dlogits) = cross_entropy(&cache.logits, batch, config.vocab_size);
    let data = run_backward(params, config, batch, &cache, &dlogits);
    Ok((loss, LmParams { layout: params.layout.clone(), data }))
}

/// Gradient of the mean NLL over `batch`, shaped like the parameters.
pub fn gradients<F: Scalar>(params: &LmParams<F>, config: &LmConfig, batch: &[&[u32]]) -> Result<LmParams<F>> {
    let b = Batch::new(batch, config)?;
    Ok(loss_and_gradients(params, config, &b, None)?.1)
}

/// Loss of a prepared batch without gradients.
pub(crate) fn batch_loss<F: Scalar>(params: &LmParams<F>, config: &LmConfig, batch: &Batch) -> f64 {
    let cache = run_forward(params, config, batch, None);
    cross_entropy(&cache.logits, batch, config.vocab_size).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn batch_weights_sum_to_one() {
        let cfg = LmConfig::tiny();
        let b = Batch::new(&[&[1, 2, 3][..], &[4, 5][..]], &cfg).unwrap();
        assert_eq!(b.time, 2);
        assert_eq!(b.targets, [2, 3, 5, PAD]);
        let s: f64 = b.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let cfg = LmConfig::tiny();
        let p = LmParams::<f64>::zeros(&cfg);
        let loss = nll(&p, &cfg, &[65, 66, 67, 68]).unwrap();
        assert!((loss - (258f64).ln()).abs() < 1e-12);
        assert!(((258f64).ln() - 5.5530).abs() < 1e-4);
    }

    #[test]
    fn rejects_overflow_and_bad_ids() {
        let cfg = LmConfig::tiny();
        let p = LmParams::<f32>::zeros(&cfg);
        let long = vec![1u32; cfg.context_len + 1];
        assert!(matches!(forward(&p, &cfg, &long), Err(LmError::ContextOverflow { .. })));
        assert!(matches!(forward(&p, &cfg, &[999]), Err(LmError::ShapeMismatch(_))));
        let other = LmConfig { d_model: 16, ..LmConfig::tiny() };
        assert!(matches!(forward(&p, &other, &[1]), Err(LmError::ShapeMismatch(_))));
    }

    #[test]
    fn dropout_changes_training_loss_only_with_rng() {
        let cfg = LmConfig { dropout: 0.5, ..LmConfig::tiny() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = LmParams::<f64>::init(&cfg, &mut rng);
        let b = Batch::new(&[&[1, 2, 3, 4][..]], &cfg).unwrap();
        let plain = loss_and_gradients(&p, &cfg, &b, None).unwrap().0;
        let again = loss_and_gradients(&p, &cfg, &b, None).unwrap().0;
        assert_eq!(plain, again);
        let dropped = loss_and_gradients(&p, &cfg, &b, Some(&mut rng)).unwrap().0;
        assert_ne!(plain, dropped);
    }
}
