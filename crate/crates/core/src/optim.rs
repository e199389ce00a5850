//! Adam with bias correction and optional global-norm clipping.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clip the global gradient norm to this value when set.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, step: 0, moments: BTreeMap::new() })
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = params.grad_norm().to_f64().unwrap_or(f64::INFINITY);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (one_b1, one_b2) = (T::c(1.0 - c.beta1), T::c(1.0 - c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::c(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps, scale) = (T::c(c.lr), T::c(c.eps), T::c(scale));
        for (name, p) in params.iter_mut() {
            let g = p.grad.take().expect("checked above");
            let mo = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape().to_vec()),
                v: Tensor::zeros(g.shape().to_vec()),
            });
            if mo.m.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{name}: moments {:?} vs grad {:?}", mo.m.shape(), g.shape()),
                ));
            }
            let (m, v, w) = (mo.m.data_mut(), mo.v.data_mut(), p.value.data_mut());
            for i in 0..w.len() {
                let gi = g.data()[i] * scale;
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::from_f64([2], &[1.0, -1.0]).unwrap());
        store.iter_mut().next().unwrap().1.grad = Some(Tensor::from_f64([2], &[3.0, -0.5]).unwrap());
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }).unwrap();
        adam.step(&mut store).unwrap();
        let w = store.value("w").unwrap().data().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-7 && (w[1] + 0.9).abs() < 1e-7, "{w:?}");
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros([1]));
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(adam.step(&mut store), Err(Error::MissingGrad(n)) if n == "w"));
    }
}
