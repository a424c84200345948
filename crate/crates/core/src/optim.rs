//! First-order optimizers over a [`ParamStore`].

use crate::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam or SGD with momentum. Moment buffers are indexed by position in
/// the parameter list given at construction.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    grad_clip: f64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let zeros: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.value(id).len()]).collect();
        Self {
            kind: cfg.optimizer,
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            grad_clip: cfg.grad_clip,
            ids,
            v: zeros.clone(),
            m: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Global L2 norm of the gradients after scaling by `scale`.
    pub fn grad_norm(&self, store: &ParamStore, scale: f64) -> f64 {
        self.ids.iter().flat_map(|&id| store.grad(id).data().iter()).map(|g| (g * scale) * (g * scale)).sum::<f64>().sqrt()
    }

    /// Applies one update from the accumulated gradients, each multiplied
    /// by `scale` (e.g. `1/k` when accumulating over `k` images).
    pub fn step(&mut self, store: &mut ParamStore, scale: f64) -> Result<()> {
        let norm = self.grad_norm(store, scale);
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let clip = if self.grad_clip > 0.0 && norm > self.grad_clip { self.grad_clip / norm } else { 1.0 };
        self.steps += 1;
        let t = self.steps as i32;
        let (bc1, bc2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        for (slot, &id) in self.ids.iter().enumerate() {
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            let grad = p.grad.data().to_vec();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] * scale * clip + self.weight_decay * *w;
                match self.kind {
                    OptimizerKind::Adam => {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        *w -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                    }
                    OptimizerKind::Sgd => {
                        m[i] = self.momentum * m[i] + g;
                        *w -= self.lr * m[i];
                    }
                }
            }
        }
        Ok(())
    }
}
