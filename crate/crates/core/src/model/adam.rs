use serde::{Deserialize, Serialize};

use super::{Params, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. `t` counts updates since the last reset.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub m: Params<F>,
    pub v: Params<F>,
    pub t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, like: &Params<F>) -> Self {
        Self {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m = self.m.zeros_like();
        self.v = self.v.zeros_like();
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut Params<F>, grads: &Params<F>, lr: f64) -> Result<()> {
        let grad_tensors = grads.tensors();
        for (name, _, g) in &grad_tensors {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name.clone()));
            }
        }
        let mut p_tensors = params.tensors_mut();
        if p_tensors.len() != grad_tensors.len()
            || p_tensors.iter().zip(&grad_tensors).any(|((_, p), (_, _, g))| p.len() != g.len())
        {
            return Err(Error::Shape("gradient shapes do not match parameters".into()));
        }
        self.t += 1;
        let c = &self.config;
        let b1 = F::lit(c.beta1);
        let b2 = F::lit(c.beta2);
        let one = F::one();
        let step = F::lit(lr / (1.0 - c.beta1.powf(self.t as f64)));
        let inv_sqrt_bc2 = F::lit(1.0 / (1.0 - c.beta2.powf(self.t as f64)).sqrt());
        let eps = F::lit(c.eps);
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((name, p), (_, m)), (_, v)), (_, _, g)) in p_tensors.iter_mut().zip(ms).zip(vs).zip(&grad_tensors) {
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.iter()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name.clone()));
            }
        }
        Ok(())
    }
}
