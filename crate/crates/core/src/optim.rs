//! AdamW with decoupled weight decay, plus the cosine-annealing schedule.

use crate::params::{GradStore, ParamSet};
use crate::tensor::Arr;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Arr>,
    v: Vec<Arr>,
    step_count: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamSet) -> Self {
        let m = params
            .ids()
            .map(|id| Arr::zeros(params.value(id).raw_dim()))
            .collect();
        let v = params
            .ids()
            .map(|id| Arr::zeros(params.value(id).raw_dim()))
            .collect();
        AdamW {
            config,
            m,
            v,
            step_count: 0,
        }
    }

    /// One update with the supplied learning rate (the schedule owns lr).
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradStore, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (id, grad) in grads.iter() {
            let i = id.index();
            ndarray::Zip::from(&mut self.m[i])
                .and(grad)
                .for_each(|m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            ndarray::Zip::from(&mut self.v[i])
                .and(grad)
                .for_each(|v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            let value = params.value_mut(id);
            ndarray::Zip::from(value)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    let m_hat = m / bias1;
                    let v_hat = v / bias2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * *p);
                });
        }
    }
}

/// Periodic cosine annealing: lr(t) = eta_min + (lr0 - eta_min) * (1 + cos(pi t / t_max)) / 2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub eta_min: f64,
    pub t_max: f64,
}

impl CosineSchedule {
    pub fn lr_at(&self, t: f64) -> f64 {
        self.eta_min
            + (self.base_lr - self.eta_min) * (1.0 + (std::f64::consts::PI * t / self.t_max).cos())
                / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::IxDyn;

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule {
            base_lr: 1e-3,
            eta_min: 1e-5,
            t_max: 50.0,
        };
        assert_relative_eq!(s.lr_at(0.0), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(s.lr_at(50.0), 1e-5, max_relative = 1e-9);
        assert_relative_eq!(s.lr_at(100.0), 1e-3, max_relative = 1e-9);
        assert_relative_eq!(s.lr_at(25.0), (1e-3 + 1e-5) / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn adamw_first_step_matches_reference() {
        // Single parameter, g=1: m_hat = 1, v_hat = 1, update = lr*(1/(1+eps) + wd*p).
        let mut ps = ParamSet::new();
        let id = ps.alloc("w", Arr::from_elem(IxDyn(&[1]), 2.0));
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &ps);
        let mut grads = GradStore::default();
        grads.accumulate(id, Arr::from_elem(IxDyn(&[1]), 1.0));
        opt.step(&mut ps, &grads, 0.1);
        let expected = 2.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01 * 2.0);
        assert_relative_eq!(ps.value(id)[[0]], expected, max_relative = 1e-12);
    }
}
