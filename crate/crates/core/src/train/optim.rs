//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("optimizer produced a non-finite value in parameter block {block} at index {index}")]
    NonFinite { block: usize, index: usize },
    #[error("parameter block {block} has {params} entries but its gradient has {grads}")]
    ShapeMismatch {
        block: usize,
        params: usize,
        grads: usize,
    },
    #[error("optimizer state was built for {expected} parameter blocks, got {got}")]
    BlockCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    #[serde(rename = "rmsprop")]
    RmsProp {
        lr: f64,
        alpha: f64,
        eps: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    /// RMSprop with `alpha = 0.99`, `eps = 1e-8`.
    pub fn rmsprop(lr: f64) -> Self {
        OptimizerConfig::RmsProp {
            lr,
            alpha: 0.99,
            eps: 1e-8,
        }
    }

    /// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr }
            | OptimizerConfig::RmsProp { lr, .. }
            | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Sgd { lr }
            | OptimizerConfig::RmsProp { lr, .. }
            | OptimizerConfig::Adam { lr, .. } => *lr = new_lr,
        }
        self
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::RmsProp { .. } => "rmsprop",
            OptimizerConfig::Adam { .. } => "adam",
        }
    }
}

/// Optimizer together with its per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer<S> {
    pub config: OptimizerConfig,
    pub steps: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    fn ensure_state(&mut self, sizes: &[usize]) -> Result<(), OptimError> {
        if self.second.is_empty() {
            self.second = sizes.iter().map(|&n| vec![S::zero(); n]).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.first = sizes.iter().map(|&n| vec![S::zero(); n]).collect();
            }
        }
        if self.second.len() != sizes.len() {
            return Err(OptimError::BlockCount {
                expected: self.second.len(),
                got: sizes.len(),
            });
        }
        Ok(())
    }

    /// Applies one update to every parameter block. Parameters are left
    /// untouched if any updated value would be non-finite.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]]) -> Result<(), OptimError> {
        if params.len() != grads.len() {
            return Err(OptimError::BlockCount {
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (block, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(OptimError::ShapeMismatch {
                    block,
                    params: p.len(),
                    grads: g.len(),
                });
            }
        }
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        self.ensure_state(&sizes)?;
        let t = self.steps + 1;

        let mut updates: Vec<Vec<S>> = Vec::with_capacity(params.len());
        let mut second = self.second.clone();
        let mut first = self.first.clone();
        for (block, g) in grads.iter().enumerate() {
            let mut delta = vec![S::zero(); g.len()];
            match self.config {
                OptimizerConfig::Sgd { lr } => {
                    let lr = S::lit(lr);
                    for (d, &gi) in delta.iter_mut().zip(g.iter()) {
                        *d = -lr * gi;
                    }
                }
                OptimizerConfig::RmsProp { lr, alpha, eps } => {
                    let (lr, alpha, eps) = (S::lit(lr), S::lit(alpha), S::lit(eps));
                    let v = &mut second[block];
                    for i in 0..g.len() {
                        v[i] = alpha * v[i] + (S::one() - alpha) * g[i] * g[i];
                        delta[i] = -lr * g[i] / (v[i].sqrt() + eps);
                    }
                }
                OptimizerConfig::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let bc1 = S::lit(1.0 - beta1.powi(t as i32));
                    let bc2 = S::lit(1.0 - beta2.powi(t as i32));
                    let (lr, b1, b2, eps) = (S::lit(lr), S::lit(beta1), S::lit(beta2), S::lit(eps));
                    let m = &mut first[block];
                    let v = &mut second[block];
                    for i in 0..g.len() {
                        m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        delta[i] = -lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            for (index, (&d, &p)) in delta.iter().zip(params[block].iter()).enumerate() {
                if !(p + d).is_finite() {
                    return Err(OptimError::NonFinite { block, index });
                }
            }
            updates.push(delta);
        }

        for (p, d) in params.iter_mut().zip(&updates) {
            for (pi, &di) in p.iter_mut().zip(d) {
                *pi += di;
            }
        }
        self.second = second;
        self.first = first;
        self.steps = t;
        Ok(())
    }
}
