//! AdamW: Adam with weight decay applied directly to the weights instead of
//! being folded into the gradient moments.
//!
//! ```text
//! m  = b1 m + (1 - b1) g
//! v  = b2 v + (1 - b2) g^2
//! p -= lr * wd * p + lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Optimizer(format!(
                "betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.eps <= 0.0 || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Optimizer(format!(
                "need lr > 0, eps > 0, weight_decay >= 0 (lr={}, eps={}, wd={})",
                self.lr, self.eps, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar = f32> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; the parameter list
    /// must keep the same order and shapes across steps.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<&Tensor<T>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Optimizer(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Optimizer("parameter list changed between steps".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| Error::Optimizer(format!("missing gradient for parameter {i}")))?;
            if g.shape() != p.shape() || self.m[i].len() != p.len() {
                return Err(Error::Optimizer(format!(
                    "parameter {i}: gradient shape {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let lr = T::lit(c.lr);
        let decay = T::one() - T::lit(c.lr * c.weight_decay);
        let eps = T::lit(c.eps);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = g.expect("checked above").data();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::with_lr(0.01)
        };
        let mut opt = AdamW::<f64>::new(cfg).unwrap();
        let mut p = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::new([3], vec![0.3, -7.0, 1e-3]).unwrap();
        let before = p.clone();
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        for ((a, b), gi) in p.data().iter().zip(before.data()).zip(g.data()) {
            let expected = -0.01 * gi.signum();
            assert!((a - b - expected).abs() < 1e-6, "{a} {b} {gi}");
        }
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default()).unwrap();
        let mut p = Tensor::new([2], vec![2.0, -4.0]).unwrap();
        let g = Tensor::zeros([2]);
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        let factor = 1.0 - 0.01 * 0.01;
        assert!((p.data()[0] - 2.0 * factor).abs() < 1e-15);
        assert!((p.data()[1] + 4.0 * factor).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut opt = AdamW::<f32>::new(AdamWConfig::default()).unwrap();
        let mut p = Tensor::zeros([2]);
        assert!(matches!(opt.step(&mut [&mut p], &[None]), Err(Error::Optimizer(_))));
    }

    #[test]
    fn rejects_invalid_hyperparameters() {
        for cfg in [
            AdamWConfig { beta1: 1.0, ..Default::default() },
            AdamWConfig { beta2: 0.0, ..Default::default() },
            AdamWConfig { eps: 0.0, ..Default::default() },
        ] {
            assert!(AdamW::<f32>::new(cfg).is_err());
        }
    }
}
