//! AdamW with per-group learning rates and parameter freezing, plus the
//! step-decay schedules used by the two models.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGrads, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr_head: f64,
    pub lr_encoder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr_head: 1e-4,
            lr_encoder: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    trainable: Vec<bool>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Array2::zeros(p.value.dim())).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            trainable: vec![true; store.len()],
            t: 0,
        }
    }

    /// Only `ids` receive updates from now on.
    pub fn train_only(&mut self, ids: &[ParamId]) {
        self.trainable.iter_mut().for_each(|t| *t = false);
        for id in ids {
            self.trainable[id.0] = true;
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with every group rate multiplied by `lr_factor`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr_factor: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.t as usize,
                value: f64::NAN,
            });
        }
        self.t += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !self.trainable[id.0] {
                continue;
            }
            let lr = lr_factor
                * match store.get(id).group {
                    ParamGroup::Head => c.lr_head,
                    ParamGroup::Encoder => c.lr_encoder,
                };
            if lr == 0.0 {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            m.zip_mut_with(g, |m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            let value = store.value_mut(id);
            ndarray::Zip::from(value).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (c.weight_decay * *w + (m / bias1) / ((v / bias2).sqrt() + c.eps));
            });
        }
        Ok(())
    }
}

/// Multiplier after a single ×0.1 drop at `decay_epoch` (0-based epochs).
pub fn step_decay(epoch: usize, decay_epoch: usize) -> f64 {
    if epoch >= decay_epoch {
        0.1
    } else {
        1.0
    }
}

/// Multiplier with a ×0.1 drop at each fraction of `total` steps.
pub fn multi_step_decay(step: usize, total: usize, milestones: &[f64]) -> f64 {
    milestones
        .iter()
        .filter(|&&f| step >= (f * total as f64).floor() as usize)
        .fold(1.0, |acc, _| acc * 0.1)
}

pub const LEVILM_MILESTONES: [f64; 2] = [0.67, 0.89];
