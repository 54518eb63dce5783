//! Named parameters and SGD with momentum.

use crate::autograd::GradMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer hyperparameters. Defaults: lr 0.01, momentum 0.9, weight decay 1e-4.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    momentum: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let momentum = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            momentum,
            trainable,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn momentum_buffer(&self) -> &Tensor {
        &self.momentum
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Replaces the value, keeping the shape; resets the momentum buffer.
    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: self.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.value = value;
        self.momentum = Tensor::zeros(self.value.shape().to_vec());
        Ok(())
    }
}

/// One SGD step: `v <- momentum * v + (g + wd * w)`, `w <- w - lr * v`.
///
/// Frozen parameters are skipped entirely. Every trainable parameter must
/// have a gradient entry; the check runs before any parameter is touched.
pub fn sgd_step(params: &mut [Parameter], grads: &GradMap, cfg: &SgdConfig) -> Result<()> {
    for p in params.iter().filter(|p| p.trainable) {
        let g = grads
            .get(&p.name)
            .ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        if g.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                lhs: p.value.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    for p in params.iter_mut().filter(|p| p.trainable) {
        let g = &grads[&p.name];
        let w = p.value.data_mut();
        let v = p.momentum.data_mut();
        for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *wi);
            *wi -= cfg.lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(name: &str, g: f32) -> GradMap {
        let mut m = GradMap::new();
        m.insert(name.to_string(), Tensor::from_vec(vec![g]));
        m
    }

    #[test]
    fn defaults() {
        let c = SgdConfig::default();
        assert_eq!((c.lr, c.momentum, c.weight_decay), (0.01, 0.9, 1e-4));
    }

    #[test]
    fn plain_step() {
        let mut ps = vec![Parameter::new("w", Tensor::from_vec(vec![1.0]), true)];
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        sgd_step(&mut ps, &grads("w", 2.0), &cfg).unwrap();
        assert!((ps[0].value().data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn momentum_two_steps() {
        let mut ps = vec![Parameter::new("w", Tensor::from_vec(vec![0.0]), true)];
        let cfg = SgdConfig { lr: 1.0, momentum: 0.9, weight_decay: 0.0 };
        let g = grads("w", 1.0);
        sgd_step(&mut ps, &g, &cfg).unwrap();
        sgd_step(&mut ps, &g, &cfg).unwrap();
        assert!((ps[0].value().data()[0] + 2.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_untouched_and_missing_gradient_errors() {
        let mut ps = vec![
            Parameter::new("t", Tensor::from_vec(vec![0.3]), false),
            Parameter::new("s", Tensor::from_vec(vec![0.3]), true),
        ];
        let before = ps[0].value().clone();
        let cfg = SgdConfig::default();
        sgd_step(&mut ps, &grads("s", 1.0), &cfg).unwrap();
        assert!(ps[0].value().bit_eq(&before));
        let err = sgd_step(&mut ps, &GradMap::new(), &cfg).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(n) if n == "s"));
    }
}
