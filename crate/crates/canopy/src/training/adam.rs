//! Adam with global-norm gradient clipping and optional frozen tensors.

use ndarray::Array2;

use crate::params::{GradStore, ParamId, ParamSet};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    frozen: Vec<bool>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let m = params
            .iter()
            .map(|(_, _, t)| Array2::zeros(t.raw_dim()))
            .collect::<Vec<_>>();
        let v = m.clone();
        let frozen = vec![false; m.len()];
        Self {
            cfg,
            step_count: 0,
            m,
            v,
            frozen,
        }
    }

    /// Exclude a tensor from updates. Its moments stay zero.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Scale factor that caps the gradient's global norm at `clip_norm`.
    pub fn clip_factor(&self, grads: &GradStore) -> f64 {
        match self.cfg.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        }
    }

    /// One update over every non-frozen tensor.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradStore) {
        let clip = self.clip_factor(grads);
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        for id in params.ids() {
            if self.frozen[id.0] {
                continue;
            }
            let g = grads.get(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let tensor = params.get_mut(id);
            ndarray::Zip::from(tensor)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
                    *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                });
        }
    }
}
