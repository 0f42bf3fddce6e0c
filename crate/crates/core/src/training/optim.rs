use crate::diffcore::{Array2, ParamStore};

use super::config::OptimizerConfig;

/// First-order optimizer over a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    lr: f64,
    moments: Vec<(Array2, Array2)>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, lr: f64, store: &ParamStore) -> Self {
        let moments = match cfg {
            OptimizerConfig::Adam { .. } => store
                .iter()
                .map(|p| {
                    let (r, c) = p.value.shape();
                    (Array2::zeros(r, c), Array2::zeros(r, c))
                })
                .collect(),
            OptimizerConfig::Sgd => Vec::new(),
        };
        Self { cfg, lr, moments }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        let t = store.bump_step();
        let lr = self.lr;
        match self.cfg {
            OptimizerConfig::Sgd => {
                for p in store.iter_mut() {
                    p.value.add_scaled(&p.grad, -lr);
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(t as i32);
                let c2 = 1.0 - beta2.powi(t as i32);
                for (p, (m, v)) in store.iter_mut().zip(&mut self.moments) {
                    let w = p.value.as_mut_slice();
                    let g = p.grad.as_slice();
                    for (((wi, &gi), mi), vi) in w
                        .iter_mut()
                        .zip(g)
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mh = *mi / c1;
                        let vh = *vi / c2;
                        *wi -= lr * mh / (vh.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}
