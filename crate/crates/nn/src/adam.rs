use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` at step `t >= 1`.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig, lr: f64) {
    assert!(t >= 1, "Adam steps are 1-based");
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let (tb1, tb2) = (T::from_f64(b1), T::from_f64(b2));
    let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let (ic1, ic2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
    let (tlr, eps) = (T::from_f64(lr), T::from_f64(cfg.epsilon));
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = tb1 * m[i] + ob1 * g;
        v[i] = tb2 * v[i] + ob2 * g * g;
        let mh = m[i] * ic1;
        let vh = v[i] * ic2;
        params[i] = params[i] - tlr * mh / (vh.sqrt() + eps);
    }
}

/// Moment buffers for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Advances the step counter and updates every tensor with rate `lr`.
    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &[&[T]], lr: f64) {
        self.t += 1;
        for (i, p) in params.into_iter().enumerate() {
            adam_step(p, grads[i], &mut self.m[i], &mut self.v[i], self.t, &self.config, lr);
        }
    }
}
