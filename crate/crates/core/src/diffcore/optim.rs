//! Adaptive-moment optimizer over a parameter store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::buffer::{Buffer, Scalar};
use super::tape::ParamStore;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub updated: usize,
    /// Parameters skipped this step because their gradient was non-finite.
    pub skipped_non_finite: Vec<String>,
}

struct Moments<S: Scalar> {
    first: Buffer<S>,
    second: Buffer<S>,
}

/// First/second moment accumulators with bias correction; updates are
/// deterministic given identical inputs (name-ordered iteration).
pub struct Adam<S: Scalar> {
    config: OptimConfig,
    state: BTreeMap<String, Moments<S>>,
    step_count: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: OptimConfig) -> Self {
        Adam { config, state: BTreeMap::new(), step_count: 0 }
    }

    pub fn config(&self) -> OptimConfig {
        self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter in the store, scaling gradients by
    /// `grad_scale` (e.g. 1/batch for averaged accumulation).
    pub fn step(&mut self, store: &mut ParamStore<S>, grad_scale: f64) -> StepReport {
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = S::from_f64(self.config.beta1);
        let b2 = S::from_f64(self.config.beta2);
        let eps = S::from_f64(self.config.eps);
        let scale = S::from_f64(grad_scale);
        let bias1 = S::one() - b1.powi(t);
        let bias2 = S::one() - b2.powi(t);
        let lr = S::from_f64(self.config.lr);

        let mut report = StepReport::default();
        for (name, value, grad) in store.pairs_mut() {
            if !grad.all_finite() {
                report.skipped_non_finite.push(name.clone());
                continue;
            }
            let slot = self.state.entry(name.clone()).or_insert_with(|| Moments {
                first: Buffer::zeros_like(value),
                second: Buffer::zeros_like(value),
            });
            let m = slot.first.data_mut();
            let v = slot.second.data_mut();
            let p = value.data_mut();
            let g = grad.data();
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            report.updated += 1;
        }
        report
    }
}
