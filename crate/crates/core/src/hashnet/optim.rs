use serde::{Deserialize, Serialize};

use super::head::{GradientSet, HashHead};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for AdamW, shaped like the head they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    step_count: u64,
    first_moment: GradientSet<T>,
    second_moment: GradientSet<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(head: &HashHead<T>, config: AdamWConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: GradientSet::zeros_like(head),
            second_moment: GradientSet::zeros_like(head),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One decoupled-weight-decay Adam update.
    ///
    /// Gradients are validated before anything is touched, so a rejected
    /// update leaves both the head and the state unchanged.
    pub fn step(&mut self, head: &mut HashHead<T>, grads: &GradientSet<T>) -> Result<()> {
        if !grads.is_congruent(head) || !self.first_moment.is_congruent(head) {
            return Err(Error::shape("gradient set does not match the head's parameter shapes"));
        }
        for (i, (w, b)) in grads.weights.iter().zip(&grads.biases).enumerate() {
            if let Some(j) = w.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: format!("layers[{i}].weight[{j}] gradient"),
                });
            }
            if let Some(j) = b.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: format!("layers[{i}].bias[{j}] gradient"),
                });
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as f64;
        let lr = T::lit(c.learning_rate);
        let decay = T::lit(1.0 - c.learning_rate * c.weight_decay);
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let corr1 = T::lit(1.0 - c.beta1.powf(t));
        let corr2 = T::lit(1.0 - c.beta2.powf(t));
        let eps = T::lit(c.epsilon);

        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *p *= decay;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };

        for (i, layer) in head.layers_mut().iter_mut().enumerate() {
            update(
                &mut layer.weight,
                &grads.weights[i],
                &mut self.first_moment.weights[i],
                &mut self.second_moment.weights[i],
            );
            update(
                &mut layer.bias,
                &grads.biases[i],
                &mut self.first_moment.biases[i],
                &mut self.second_moment.biases[i],
            );
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn adamw_step<T: Scalar>(
    head: &mut HashHead<T>,
    grads: &GradientSet<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    state.step(head, grads)
}
