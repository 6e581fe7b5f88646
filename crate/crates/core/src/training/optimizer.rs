use std::collections::HashMap;

use super::config::OptimizerKind;
use crate::autodiff::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam or SGD with momentum; moment buffers are keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    buffers: HashMap<String, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64) -> Self {
        Optimizer {
            kind,
            lr,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            buffers: HashMap::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::new(OptimizerKind::Adam, lr, 0.0)
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Optimizer::new(OptimizerKind::SgdMomentum, lr, momentum)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; nothing is modified when any gradient is non-finite.
    pub fn step<P: ParameterSet + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let mut bad = None;
        params.for_each_param(&mut |p| {
            if bad.is_none() && !p.grad().is_finite() {
                bad = Some(p.name().to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of parameter '{name}'")));
        }
        self.step += 1;
        let t = self.step as i32;
        let (lr, momentum, b1, b2, eps, kind) = (self.lr, self.momentum, self.beta1, self.beta2, self.eps, self.kind);
        let buffers = &mut self.buffers;
        params.for_each_param_mut(&mut |p| {
            let n = p.value().numel();
            let m = buffers.entry(p.name().to_string()).or_insert_with(|| Moments {
                first: vec![0.0; n],
                second: if kind == OptimizerKind::Adam { vec![0.0; n] } else { Vec::new() },
            });
            let g = p.grad().data();
            let mut delta = vec![0.0; n];
            match kind {
                OptimizerKind::Adam => {
                    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                    for i in 0..n {
                        m.first[i] = b1 * m.first[i] + (1.0 - b1) * g[i];
                        m.second[i] = b2 * m.second[i] + (1.0 - b2) * g[i] * g[i];
                        let mh = m.first[i] / c1;
                        let vh = m.second[i] / c2;
                        delta[i] = lr * mh / (vh.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for i in 0..n {
                        m.first[i] = momentum * m.first[i] + g[i];
                        delta[i] = lr * m.first[i];
                    }
                }
            }
            p.update(|i, v| v - delta[i]);
        });
        Ok(())
    }
}
