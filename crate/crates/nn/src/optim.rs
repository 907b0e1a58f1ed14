use std::collections::BTreeMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named parameter tensors plus Adam moment state. BTreeMap keeps iteration
/// order (and therefore update order and serialization order) canonical.
pub struct ParamStore<S: Scalar> {
    entries: BTreeMap<String, ParamEntry<S>>,
}

struct ParamEntry<S: Scalar> {
    value: Tensor<S>,
    m: Tensor<S>,
    v: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<S>) {
        let m = Tensor::zeros(value.shape().to_vec());
        let v = Tensor::zeros(value.shape().to_vec());
        let prev = self.entries.insert(name.to_string(), ParamEntry { value, m, v });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set(&mut self, name: &str, value: Tensor<S>) {
        let e = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(e.value.shape(), value.shape(), "shape mismatch for {name}");
        e.value = value;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// One Adam update. `step` is 1-based.
    pub fn adam_step(&mut self, grads: &[(String, Tensor<S>)], cfg: &AdamConfig, step: usize) {
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - cfg.beta2);
        let bc1 = S::from_f64(1.0 / (1.0 - cfg.beta1.powi(step as i32)));
        let bc2 = S::from_f64(1.0 / (1.0 - cfg.beta2.powi(step as i32)));
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.eps);

        for (name, grad) in grads {
            let e = self
                .entries
                .get_mut(name.as_str())
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let g = grad.data();
            let m = e.m.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + one_m_b1 * *gi;
            }
            let v = e.v.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + one_m_b2 * *gi * *gi;
            }
            let (m, v) = (e.m.data(), e.v.data());
            let p = e.value.data_mut();
            for i in 0..p.len() {
                let m_hat = m[i] * bc1;
                let v_hat = v[i] * bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<S: Scalar>(grads: &mut [(String, Tensor<S>)], max_norm: f64) {
    let mut sq = 0.0f64;
    for (_, g) in grads.iter() {
        for v in g.data() {
            let x = v.to_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = S::from_f64(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
}
