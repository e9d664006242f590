//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for a flat vector of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one update to the concatenation of `values`, in order.
    pub fn update<'a>(
        &mut self,
        values: impl IntoIterator<Item = &'a mut [f64]>,
        grads: &[&[f64]],
        config: &AdamConfig,
    ) {
        self.step += 1;
        let mut offset = 0;
        for (value, grad) in values.into_iter().zip(grads) {
            let n = value.len();
            adam_step(value, grad, &mut self.m[offset..offset + n], &mut self.v[offset..offset + n], self.step, config);
            offset += n;
        }
        debug_assert_eq!(offset, self.m.len());
    }

    /// Grows the moment buffers with zeros (for newly appended values).
    pub fn extend_zeros(&mut self, n: usize) {
        self.m.extend(std::iter::repeat_n(0.0, n));
        self.v.extend(std::iter::repeat_n(0.0, n));
    }
}

/// One Adam update at step `t >= 1`.
pub fn adam_step(value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, config: &AdamConfig) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    let step = config.learning_rate / bc1;
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        value[i] -= step * m[i] / ((v[i] / bc2).sqrt() + config.epsilon);
    }
}
