//! Bias-corrected Adam over a [`ParamVec`].

use crate::autodiff::tensor::{Grads, ParamVec};

pub const DEFAULT_LEARNING_RATE: f64 = 0.0001;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamVec, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: (0..params.len()).map(|i| vec![0.0; params.get(i).len()]).collect(),
            second_moment: (0..params.len()).map(|i| vec![0.0; params.get(i).len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step. Tensors with `requires_grad == false` are left
    /// untouched. A tensor whose gradient contains non-finite values is
    /// skipped entirely and its name reported. All-zero gradients decay the
    /// moments but never move the parameter.
    pub fn update(&mut self, params: &mut ParamVec, grads: &Grads) -> Vec<String> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut rejected = Vec::new();
        for idx in 0..params.len() {
            if !params.get(idx).requires_grad() {
                continue;
            }
            let g = grads.get(idx);
            if g.iter().any(|v| !v.is_finite()) {
                rejected.push(params.name(idx).to_string());
                continue;
            }
            let all_zero = g.iter().all(|v| *v == 0.0);
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let data = params.get_mut(idx).data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                if !all_zero {
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    data[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                }
            }
        }
        rejected
    }
}
