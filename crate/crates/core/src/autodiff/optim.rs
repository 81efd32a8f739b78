//! AdamW with decoupled weight decay, plus the warmup/cosine schedule.

use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Optimizer state: first/second moments per parameter and a step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.data(id).len()]).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. `grads` is indexed by parameter id;
    /// frozen parameters are skipped, any other parameter without a
    /// gradient is an error and leaves the store untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        for id in store.ids() {
            if store.is_frozen(id) {
                continue;
            }
            match &grads[id.0] {
                Some(g) if g.len() == store.data(id).len() => {}
                Some(g) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "adamw_step",
                        lhs: store.shape(id).to_vec(),
                        rhs: vec![g.len()],
                    })
                }
                None => return Err(TensorError::MissingGradient(store.name(id).to_string())),
            }
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let g = grads[id.0].as_ref().expect("checked above");
            let decay = if store.decays(id) { c.weight_decay } else { 0.0 };
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.data_mut(id);
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + decay * p[i]);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 (or constant
/// `peak` when `cosine` is off).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub cosine: bool,
}

impl LrSchedule {
    /// Learning rate for the zero-based `step`.
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if !self.cosine {
            return self.peak;
        }
        let decay_steps = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / decay_steps as f64).min(1.0);
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
