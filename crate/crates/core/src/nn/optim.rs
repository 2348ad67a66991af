use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    /// Adaptive moments with decoupled weight decay.
    AdamW { beta1: f64, beta2: f64, eps: f64 },
    /// Plain gradient descent with weight decay folded into the gradient.
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    weight_decay: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64, weight_decay: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            config,
            lr,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters with no gradient are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Matrix>]) {
        self.step += 1;
        let (lr, wd) = (self.lr, self.weight_decay);
        for id in 0..params.len() {
            let p = params.get_mut(id).as_mut_slice();
            let g = grads.get(id).and_then(Option::as_ref).map(Matrix::as_slice);
            match self.config {
                OptimizerConfig::AdamW { beta1, beta2, eps } => {
                    let t = self.step as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = self.first[id].as_mut_slice();
                    let v = self.second[id].as_mut_slice();
                    for k in 0..p.len() {
                        let gk = g.map_or(0.0, |g| g[k]);
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                        let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps) + wd * p[k];
                        p[k] -= lr * update;
                    }
                }
                OptimizerConfig::Sgd => {
                    for k in 0..p.len() {
                        let gk = g.map_or(0.0, |g| g[k]);
                        p[k] -= lr * (gk + wd * p[k]);
                    }
                }
            }
        }
    }
}
