//! Parameter layout and storage.
//!
//! All learned tensors live in one flat buffer; [`Layout`] records each
//! tensor's name, shape and offset. The optimizer, gradient checks and the
//! checkpoint format all work off this single index.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::LmConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Name without the `h{layer}.` prefix, shared by all layers.
    pub fn family(&self) -> &str {
        match self.name.split_once('.') {
            Some((head, rest)) if head.starts_with('h') && head[1..].parse::<usize>().is_ok() => rest,
            _ => &self.name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc_w: usize,
    pub fc_b: usize,
    pub mproj_w: usize,
    pub mproj_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub wte: usize,
    pub wpe: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    /// Separate output projection `[d_model, vocab]`, absent when tied to `wte`.
    pub head: Option<usize>,
}

impl Layout {
    pub fn new(c: &LmConfig) -> Layout {
        let (v, t, d, f) = (c.vocab_size, c.context_len, c.d_model, c.d_ff);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let info = TensorInfo { name, shape, offset: total };
            total += info.len();
            let off = info.offset;
            tensors.push(info);
            off
        };
        let wte = add("wte".into(), vec![v, d]);
        let wpe = add("wpe".into(), vec![t, d]);
        let layers = (0..c.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: add(format!("h{l}.ln1.g"), vec![d]),
                ln1_b: add(format!("h{l}.ln1.b"), vec![d]),
                qkv_w: add(format!("h{l}.attn.qkv.w"), vec![d, 3 * d]),
                qkv_b: add(format!("h{l}.attn.qkv.b"), vec![3 * d]),
                proj_w: add(format!("h{l}.attn.proj.w"), vec![d, d]),
                proj_b: add(format!("h{l}.attn.proj.b"), vec![d]),
                ln2_g: add(format!("h{l}.ln2.g"), vec![d]),
                ln2_b: add(format!("h{l}.ln2.b"), vec![d]),
                fc_w: add(format!("h{l}.mlp.fc.w"), vec![d, f]),
                fc_b: add(format!("h{l}.mlp.fc.b"), vec![f]),
                mproj_w: add(format!("h{l}.mlp.proj.w"), vec![f, d]),
                mproj_b: add(format!("h{l}.mlp.proj.b"), vec![d]),
            })
            .collect();
        let lnf_g = add("lnf.g".into(), vec![d]);
        let lnf_b = add("lnf.b".into(), vec![d]);
        let head = (!c.tie_embeddings).then(|| add("lm_head.w".into(), vec![d, v]));
        Layout { tensors, total, wte, wpe, layers, lnf_g, lnf_b, head }
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmParams<F = f32> {
    pub layout: Layout,
    pub data: Vec<F>,
}

impl<F: Scalar> LmParams<F> {
    pub fn zeros(config: &LmConfig) -> Self {
        let layout = Layout::new(config);
        let data = vec![F::zero(); layout.total];
        LmParams { layout, data }
    }

    /// GPT-2 style initialisation: weights and embeddings from N(0, 0.02),
    /// residual output projections scaled by `1/sqrt(2 * n_layers)`, biases
    /// zero, layer-norm gains one.
    pub fn init<R: Rng + ?Sized>(config: &LmConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let base = Normal::new(0.0, 0.02).expect("valid sigma");
        let resid = Normal::new(0.0, 0.02 / (2.0 * config.n_layers.max(1) as f64).sqrt()).expect("valid sigma");
        for t in p.layout.tensors.clone() {
            let fam = t.family().to_string();
            let slice = &mut p.data[t.range()];
            if fam.ends_with(".g") {
                slice.fill(F::one());
            } else if t.shape.len() == 2 {
                let dist = if fam == "attn.proj.w" || fam == "mlp.proj.w" { resid } else { base };
                for x in slice.iter_mut() {
                    *x = F::of(dist.sample(rng));
                }
            }
        }
        p
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let r = self.layout.get(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> LmParams<G> {
        LmParams {
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::of(x.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }
}
