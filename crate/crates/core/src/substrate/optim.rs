//! Adaptive moment estimation with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Array, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Moments start at zero on the first
    /// call.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Array<T>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.values().iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = T::from_f64_lossy(1.0 - b1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - b2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(self.cfg.eps));
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Array::scalar(v));
        s
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = store(1.0);
            let mut adam = AdamState::new(AdamConfig::default());
            adam.step(&mut p, &[Array::scalar(g)], 1e-2).unwrap();
            let delta = p.get(0).item() - 1.0;
            let expected = -1e-2 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-12, "g={g}: {delta} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(0.7);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut p, &[Array::scalar(0.0)], 1e-3).unwrap();
        }
        assert_eq!(p.get(0).item(), 0.7);
    }

    #[test]
    fn non_positive_lr_is_config_error() {
        let mut p = store(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut p, &[Array::scalar(1.0)], 0.0), Err(Error::Config(_))));
    }
}
