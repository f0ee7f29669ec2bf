//! SGD with momentum and Adam, matching the usual framework update rules.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub enum OptimizerKind {
    /// v <- mu * v + (g + wd * theta); theta <- theta - lr * v
    SgdMomentum { lr: f64, momentum: f64, weight_decay: f64 },
    /// Bias-corrected Adam.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    /// One slot per parameter: (first moment / velocity, second moment).
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        let lr = match kind {
            OptimizerKind::SgdMomentum { lr, .. } => lr,
            OptimizerKind::Adam { lr, .. } => lr,
        };
        if lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Optimizer { kind, step: 0, moments: Vec::new() })
    }

    /// Paper-style target-model optimizer: momentum 0.9, weight decay 5e-4.
    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::SgdMomentum { lr, momentum: 0.9, weight_decay: 5e-4 })
    }

    pub fn sgd_plain(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::SgdMomentum { lr, momentum: 0.0, weight_decay: 0.0 })
    }

    /// Adam with betas 0.9/0.999 and eps 1e-8.
    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 })
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    /// Applies one update using the gradients currently held by `store`.
    /// Rejects the whole step before mutating anything if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (_, p) in store.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient { name: p.name.clone() });
            }
        }
        if self.moments.len() < store.len() {
            for id in store.ids().skip(self.moments.len()) {
                let n = store.value(id).numel();
                self.moments.push((vec![0.0; n], vec![0.0; n]));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { lr, momentum, weight_decay } => {
                for id in store.ids() {
                    let grad = store.grad(id).data().to_vec();
                    let (velocity, _) = &mut self.moments[id.index()];
                    let theta = store.value_mut(id).data_mut();
                    for ((v, g), t) in velocity.iter_mut().zip(&grad).zip(theta.iter_mut()) {
                        let g = g + weight_decay * *t;
                        *v = momentum * *v + g;
                        *t -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for id in store.ids() {
                    let grad = store.grad(id).data().to_vec();
                    let (m, v) = &mut self.moments[id.index()];
                    let theta = store.value_mut(id).data_mut();
                    for ((mi, vi), (g, t)) in
                        m.iter_mut().zip(v.iter_mut()).zip(grad.iter().zip(theta.iter_mut()))
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *t -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
