use crate::autodiff::{Mat, ParamStore};
use crate::blob::round_f32;

use super::TrainConfig;

/// `lr0 · (1 − step/steps)`, zero from the final step on.
pub fn lr_at(lr0: f64, step: usize, steps: usize) -> f64 {
    if step >= steps {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / steps as f64)
}

/// Adam with decoupled weight decay. Parameters and moments are rounded to
/// `f32` after every update so a saved state reloads exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.values().iter().map(|p| Mat::zeros(p.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies gradients scaled by `clip`; `step` counts from 0.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Mat], clip: f64, lr: f64, cfg: &TrainConfig, step: usize) {
        let t = step as i32 + 1;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * clip;
                *m = round_f32(cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
                *v = round_f32(cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
                let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps) + cfg.weight_decay * *p;
                *p = round_f32(*p - lr * update);
            });
        }
    }
}
