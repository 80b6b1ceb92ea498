use crate::error::{CladError, Result};
use crate::netcore::{Grads, Param};
use crate::scalar::Scalar;

/// Bias-corrected Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Grads<T>,
    v: Grads<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Param<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Param<T>], grads: &Grads<T>, lr: f64) -> Result<()> {
        if grads.len() != params.len() || grads.iter().zip(params.iter()).any(|(g, p)| g.len() != p.data.len()) {
            return Err(CladError::Contract("gradient shapes do not match parameters".into()));
        }
        for (g, p) in grads.iter().zip(params.iter()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CladError::numeric(p.name.clone(), "non-finite gradient reached the optimizer"));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let step = T::from_f64_lossy(lr / (1.0 - self.beta1.powi(t)));
        let v_corr = T::from_f64_lossy(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = T::from_f64_lossy(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let delta = step * m[i] / ((v[i] * v_corr).sqrt() + eps);
                if !delta.is_finite() {
                    return Err(CladError::numeric(p.name.clone(), "non-finite parameter update"));
                }
                p.data[i] -= delta;
            }
        }
        Ok(())
    }
}
