//! AdamW with decoupled weight decay.
//!
//! ```text
//! θ ← θ · (1 - lr·λ)
//! m ← β1·m + (1 - β1)·g
//! v ← β2·v + (1 - β2)·g²
//! θ ← θ - lr · m̂ / (√v̂ + ε),   m̂ = m / (1 - β1^t),  v̂ = v / (1 - β2^t)
//! ```
//!
//! With `β = 0` the bias correction divides by one.

use crate::error::{HutError, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
    step: u64,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        AdamWState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[DenseMatrix], &[DenseMatrix]) {
        (&self.first, &self.second)
    }

    pub fn step(&mut self, params: Vec<&mut DenseMatrix>, grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(HutError::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != grads.len() {
            return Err(HutError::InvalidArgument(
                "parameter count changed between steps".into(),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(HutError::Shape {
                    op: "adamw",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] *= decay;
                if m_hat != 0.0 {
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DenseMatrix {
        DenseMatrix::filled(1, 1, v)
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = DenseMatrix::from_rows(&[[1.5, -2.0]]);
        let before = p.clone();
        let mut opt = AdamWState::new(AdamWConfig::default());
        for _ in 0..3 {
            opt.step(vec![&mut p], &[DenseMatrix::zeros(1, 2)]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 3);
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = scalar(0.0);
        let mut opt = AdamWState::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
        });
        opt.step(vec![&mut p], &[scalar(1.0)]).unwrap();
        assert!((p.get(0, 0) + 0.1).abs() < 1e-15);
        opt.step(vec![&mut p], &[scalar(1.0)]).unwrap();
        assert!((p.get(0, 0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn pure_weight_decay_is_geometric() {
        let (lr, wd) = (0.05, 0.1);
        let mut p = scalar(2.0);
        let mut opt = AdamWState::new(AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        });
        for _ in 0..10 {
            opt.step(vec![&mut p], &[scalar(0.0)]).unwrap();
        }
        let expected = 2.0 * (1.0 - lr * wd).powi(10);
        assert!((p.get(0, 0) - expected).abs() < 1e-14);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let mut p = scalar(0.0);
        let mut opt = AdamWState::new(AdamWConfig::default());
        assert!(opt.step(vec![&mut p], &[]).is_err());
        assert!(opt.step(vec![&mut p], &[DenseMatrix::zeros(1, 2)]).is_err());
    }
}
