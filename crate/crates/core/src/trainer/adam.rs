//! Adam optimizer with per-store first/second moment state.

use std::collections::BTreeMap;

use crate::params::ParameterStore;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(0.002)
    }
}

/// One task's optimizer state: step counter plus per-parameter moment
/// buffers, keyed by parameter name so the update order is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Direct access for checkpointing: (name, first moment, second moment).
    pub fn export(&self) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        self.moments
            .iter()
            .map(|(n, (m, v))| (n.clone(), m.clone(), v.clone()))
            .collect()
    }

    pub fn restore(t: u64, moments: Vec<(String, Vec<f64>, Vec<f64>)>) -> Self {
        AdamState {
            t,
            moments: moments.into_iter().map(|(n, m, v)| (n, (m, v))).collect(),
        }
    }

    /// Applies one Adam update to every parameter of `store` that carries a
    /// gradient buffer:
    ///
    /// ```text
    /// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
    /// w ← w − lr·m̂/(√v̂ + ε)   with  m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
    /// ```
    pub fn step(&mut self, cfg: &AdamConfig, store: &ParameterStore) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, handle) in store.iter() {
            let mut p = handle.borrow_mut();
            if !p.tensor.has_grad() {
                continue;
            }
            let n = p.tensor.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            assert_eq!(m.len(), n, "optimizer state shape drifted for {name:?}");
            let grad = p.tensor.grad().unwrap().to_vec();
            let w = p.tensor.values_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}
