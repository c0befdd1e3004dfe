use std::ops::Range;

use super::params::LmParams;
use super::TrainConfig;

/// Adam with decoupled weight decay. Decay applies to matrices only; biases
/// and layer-norm parameters are left alone.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    decayed: Vec<Range<usize>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &LmParams<f32>) -> Self {
        let decayed = params.layout.tensors.iter().filter(|t| t.shape.len() == 2).map(|t| t.range()).collect();
        AdamW { m: vec![0.0; params.len()], v: vec![0.0; params.len()], decayed, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut LmParams<f32>, grad: &[f32], lr: f64, cfg: &TrainConfig) {
        assert_eq!(grad.len(), params.data.len());
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = cfg.epsilon as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        if cfg.weight_decay > 0.0 {
            let shrink = (1.0 - lr * cfg.weight_decay) as f32;
            for r in &self.decayed {
                for p in &mut params.data[r.clone()] {
                    *p *= shrink;
                }
            }
        }
        for (((p, &g), m), v) in params.data.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() / bc2_sqrt + eps);
        }
    }
}

/// Scales `grad` in place so its global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f32], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grad {
            *g *= s;
        }
    }
    norm
}
