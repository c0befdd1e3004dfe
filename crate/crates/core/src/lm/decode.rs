//! Incremental decoding with a key/value cache.

use super::model::{gelu, layer_norm, linear};
use super::params::LmParams;
use super::scalar::{gemm, Scalar, View, ViewMut};
use super::{LmConfig, LmError, Result};

/// Feeds one token at a time, reusing cached keys and values of earlier
/// positions. Produces the same logits as a full forward pass.
pub struct DecodeState<'a, F: Scalar = f32> {
    params: &'a LmParams<F>,
    config: &'a LmConfig,
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
    pos: usize,
    logits: Vec<F>,
}

impl<'a, F: Scalar> DecodeState<'a, F> {
    pub fn new(params: &'a LmParams<F>, config: &'a LmConfig) -> Self {
        let cache = config.context_len * config.d_model;
        DecodeState {
            params,
            config,
            keys: vec![vec![F::zero(); cache]; config.n_layers],
            values: vec![vec![F::zero(); cache]; config.n_layers],
            pos: 0,
            logits: vec![F::zero(); config.vocab_size],
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn reset(&mut self) {
        self.pos = 0;
    }

    /// Logits after the most recent token.
    pub fn logits(&self) -> &[F] {
        &self.logits
    }

    /// Feeds every token of `tokens`; returns the logits after the last one.
    pub fn feed(&mut self, tokens: &[u32]) -> Result<&[F]> {
        for &t in tokens {
            self.step(t)?;
        }
        Ok(&self.logits)
    }

    pub fn step(&mut self, token: u32) -> Result<&[F]> {
        let c = self.config;
        if self.pos >= c.context_len {
            return Err(LmError::ContextOverflow { len: self.pos + 1, max: c.context_len, row: None });
        }
        if token as usize >= c.vocab_size {
            return Err(LmError::ShapeMismatch(format!("token id {token} >= vocab size {}", c.vocab_size)));
        }
        let lay = &self.params.layout;
        let w = &self.params.data;
        let (d, f, v, hd) = (c.d_model, c.d_ff, c.vocab_size, c.head_dim());
        let pos = self.pos;
        let scale = F::of(1.0 / (hd as f64).sqrt());

        let te = &w[lay.wte + token as usize * d..][..d];
        let pe = &w[lay.wpe + pos * d..][..d];
        let mut x: Vec<F> = te.iter().zip(pe).map(|(&a, &b)| a + b).collect();
        let mut h = vec![F::zero(); d];
        let mut xhat = vec![F::zero(); d];
        let mut rstd = [F::zero()];
        let mut qkv = vec![F::zero(); 3 * d];
        let mut att = vec![F::zero(); d];
        let mut out = vec![F::zero(); d];
        let mut fc = vec![F::zero(); f];
        let mut scores = vec![F::zero(); pos + 1];

        for (l, o) in lay.layers.iter().enumerate() {
            layer_norm(&x, &w[o.ln1_g..][..d], &w[o.ln1_b..][..d], d, &mut h, &mut xhat, &mut rstd);
            linear(&h, &w[o.qkv_w..][..d * 3 * d], &w[o.qkv_b..][..3 * d], 1, d, 3 * d, &mut qkv);
            self.keys[l][pos * d..(pos + 1) * d].copy_from_slice(&qkv[d..2 * d]);
            self.values[l][pos * d..(pos + 1) * d].copy_from_slice(&qkv[2 * d..]);
            let keys = &self.keys[l];
            let values = &self.values[l];
            for head in 0..c.n_heads {
                let q = &qkv[head * hd..(head + 1) * hd];
                let mut max = F::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + head * hd..][..hd];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<F>() * scale;
                    max = max.max(*s);
                }
                let mut sum = F::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in scores.iter_mut() {
                    *s /= sum;
                }
                let vh = View::strided(&values[head * hd..], pos + 1, hd, d);
                gemm(
                    View::new(&scores, 1, pos + 1),
                    vh,
                    F::zero(),
                    ViewMut::new(&mut att[head * hd..(head + 1) * hd], 1, hd),
                );
            }
            linear(&att, &w[o.proj_w..][..d * d], &w[o.proj_b..][..d], 1, d, d, &mut out);
            for (a, &b) in x.iter_mut().zip(&out) {
                *a += b;
            }
            layer_norm(&x, &w[o.ln2_g..][..d], &w[o.ln2_b..][..d], d, &mut h, &mut xhat, &mut rstd);
            linear(&h, &w[o.fc_w..][..d * f], &w[o.fc_b..][..f], 1, d, f, &mut fc);
            for z in fc.iter_mut() {
                *z = gelu(*z);
            }
            linear(&fc, &w[o.mproj_w..][..f * d], &w[o.mproj_b..][..d], 1, f, d, &mut out);
            for (a, &b) in x.iter_mut().zip(&out) {
                *a += b;
            }
        }
        layer_norm(&x, &w[lay.lnf_g..][..d], &w[lay.lnf_b..][..d], d, &mut h, &mut xhat, &mut rstd);
        let head = match lay.head {
            Some(off) => View::new(&w[off..off + d * v], d, v),
            None => View::new(&w[lay.wte..lay.wte + v * d], v, d).t(),
        };
        gemm(View::new(&h, 1, d), head, F::zero(), ViewMut::new(&mut self.logits, 1, v));
        self.pos += 1;
        Ok(&self.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::forward;
    use rand::SeedableRng;

    #[test]
    fn incremental_matches_full_forward() {
        let cfg = LmConfig { vocab_size: 300, n_layers: 2, n_heads: 2, d_model: 16, d_ff: 24, ..LmConfig::tiny() };
        let p = LmParams::<f64>::init(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let toks = [3u32, 299, 17, 42, 42, 7];
        let full = forward(&p, &cfg, &toks).unwrap();
        let mut st = DecodeState::new(&p, &cfg);
        for (i, &t) in toks.iter().enumerate() {
            let l = st.step(t).unwrap();
            for (a, b) in l.iter().zip(&full[i * cfg.vocab_size..]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let cfg = LmConfig { context_len: 2, ..LmConfig::tiny() };
        let p = LmParams::<f32>::zeros(&cfg);
        let mut st = DecodeState::new(&p, &cfg);
        st.feed(&[1, 2]).unwrap();
        assert!(matches!(st.step(3), Err(LmError::ContextOverflow { .. })));
        st.reset();
        assert!(st.step(3).is_ok());
    }
}
