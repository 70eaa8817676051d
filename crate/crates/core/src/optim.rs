//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::model::{ParamGrads, TreeLstmParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr } => lr,
        }
    }

    pub fn with_learning_rate(self, lr: f64) -> OptimizerConfig {
        match self {
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            },
            OptimizerConfig::Sgd { .. } => OptimizerConfig::Sgd { lr },
        }
    }
}

/// Optimizer with its running moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &TreeLstmParams) -> Optimizer {
        let (m, v) = match config {
            OptimizerConfig::Adam { .. } => {
                let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
                (zeros.clone(), zeros)
            }
            OptimizerConfig::Sgd { .. } => (Vec::new(), Vec::new()),
        };
        Optimizer {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` against `grads`.
    pub fn step(&mut self, params: &mut TreeLstmParams, grads: &ParamGrads) {
        self.step += 1;
        let g = grads.tensors();
        let p = params.tensors_mut();
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (pt, gt) in p.into_iter().zip(g) {
                    for (x, d) in pt.iter_mut().zip(gt) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, (pt, gt)) in p.into_iter().zip(g).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..pt.len() {
                        let d = gt[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        pt[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
