use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::policy::Params;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return error::config(format!("optimizer.lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return error::config(format!("optimizer.{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return error::config("optimizer.eps must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return error::config("optimizer.weight_decay must be >= 0");
        }
        Ok(())
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW<T> {
    pub hyper: AdamWConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step_count: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(hyper: AdamWConfig, n: usize) -> AdamW<T> {
        AdamW {
            hyper,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step_count: 0,
        }
    }

    /// One update. A non-finite gradient leaves everything untouched.
    pub fn step(&mut self, params: &mut Params<T>, grad: &[T]) -> Result<()> {
        if grad.len() != params.theta.len() || self.m.len() != grad.len() {
            return error::usage(format!(
                "gradient has {} entries, parameters {}, optimizer {}",
                grad.len(),
                params.theta.len(),
                self.m.len()
            ));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at coordinate {i}")));
        }
        let h = &self.hyper;
        let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
        let (lr, eps, wd) = (T::of(h.lr), T::of(h.eps), T::of(h.weight_decay));
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            let th = params.theta[i];
            params.theta[i] = th - lr * (mh / (vh.sqrt() + eps) + wd * th);
        }
        params.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut p = Params::<f64>::zeros(2);
        let mut opt = AdamW::new(AdamWConfig::default(), 2);
        assert!(opt.step(&mut p, &[1.0, f64::NAN]).is_err());
        assert_eq!(p.version, 0);
        assert_eq!(opt.step_count, 0);
        assert_eq!(opt.m, vec![0.0, 0.0]);
    }
}
