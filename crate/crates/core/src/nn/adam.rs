use serde::{Deserialize, Serialize};

use super::{check_len, scalar, Parameters, Scalar, ShapeError};

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

/// Moment buffers for every tensor of one model, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<(), ShapeError> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        check_len("adam parameter tensors", self.first_moment.len(), params.len())?;
        check_len("adam gradient tensors", params.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first_moment) {
            check_len("adam tensor", m.len(), p.len())?;
            check_len("adam gradient", p.len(), g.len())?;
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let beta1: T = scalar(c.beta1);
        let beta2: T = scalar(c.beta2);
        let one_minus_b1 = T::one() - beta1;
        let one_minus_b2 = T::one() - beta2;
        let correction1: T = scalar(1.0 - c.beta1.powi(t));
        let correction2: T = scalar(1.0 - c.beta2.powi(t));
        let lr: T = scalar(c.learning_rate);
        let eps: T = scalar(c.epsilon);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + one_minus_b1 * gi;
                v[i] = beta2 * v[i] + one_minus_b2 * gi * gi;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Scalar, P: Parameters<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
) -> Result<(), ShapeError> {
    state.step(params, grads)
}
