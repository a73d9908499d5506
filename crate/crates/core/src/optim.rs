//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Applied as `p -= lr * weight_decay * p`, only to tensors flagged for decay.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Adam {
            config,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update. `params[i]`, `grads[i]` and `decay[i]` describe the same tensor.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], decay: &[bool]) -> Result<()> {
        if params.len() != self.first.len()
            || grads.len() != params.len()
            || decay.len() != params.len()
        {
            return Err(Error::DimensionMismatch(format!(
                "optimizer tracks {} tensors, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let c = self.config;
        let lr = T::of(c.learning_rate);
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let eps = T::of(c.epsilon);
        let bias1 = T::one() - b1.powi(self.steps);
        let bias2 = T::one() - b2.powi(self.steps);
        let shrink = T::one() - lr * T::of(c.weight_decay);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if param.len() != self.first[i].len() || grad.len() != param.len() {
                return Err(Error::DimensionMismatch(format!("tensor {i} changed size")));
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..param.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                if decay[i] {
                    param[j] *= shrink;
                }
                param[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![3.0f64, -2.0];
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), [2]);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut [&mut x], &[&g], &[false]).unwrap();
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = vec![1.0f32];
        let mut adam = Adam::new(AdamConfig::new(0.01, 0.0), [1]);
        adam.step(&mut [&mut x], &[&[5.0]], &[false]).unwrap();
        assert!((x[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut x = vec![1.0f64, 2.0];
        let mut adam = Adam::new(AdamConfig::new(0.0, 0.1), [2]);
        adam.step(&mut [&mut x], &[&[1.0, -1.0]], &[true]).unwrap();
        assert_eq!(x, [1.0, 2.0]);
    }

    #[test]
    fn decay_only_on_flagged_tensors() {
        let mut w = vec![1.0f64];
        let mut b = vec![1.0f64];
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.5), [1, 1]);
        adam.step(&mut [&mut w, &mut b], &[&[0.0], &[0.0]], &[true, false])
            .unwrap();
        assert!((w[0] - 0.95).abs() < 1e-12);
        assert_eq!(b[0], 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut x = vec![1.0f64];
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.0), [2]);
        assert!(adam.step(&mut [&mut x], &[&[1.0]], &[false]).is_err());
    }
}
