//! Destructive optimizers over [`ParamSet`]s.

use crate::error::Result;
use crate::params::ParamSet;

/// `params -= lr * grads`
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
    params.check_congruent(grads)?;
    for ((_, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
        for (x, dx) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * dx;
        }
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl Adam {
    /// State for parameters congruent with `params`; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        self.first.check_congruent(params)?;
        params.check_congruent(grads)?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let entries = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in entries {
            let values = p.data_mut().iter_mut().zip(g.data());
            let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
            for ((x, &dx), (m, v)) in values.zip(moments) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * dx;
                *v = self.beta2 * *v + (1.0 - self.beta2) * dx * dx;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
