//! AdamW with decoupled weight decay and per-parameter rate scaling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::params::{ParamId, ParamStore};
use super::tape::Gradients;

/// Hyperparameters shared by the trainer and the CLI config file. Unknown
/// keys in a config file are rejected so typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Weight on the attention-spectrum tail sum.
    pub lambda_tail: f64,
    /// Weight on the low-band drift term inside the frequency loss; 0
    /// disables the whole frequency loss.
    pub lambda_inv: f64,
    /// Overall multiplier on the frequency loss block (the L1 low-band
    /// term plus lambda_inv times the drift term).
    pub invariance_weight: f64,
    /// Rate multiplier applied to the attention projection weights.
    pub proj_lr_mult: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            lambda_tail: 1e-2,
            lambda_inv: 0.0,
            invariance_weight: 1.0,
            proj_lr_mult: 1.0,
            seed: 0,
            epochs: 10,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_tail", self.lambda_tail),
            ("lambda_inv", self.lambda_inv),
            ("invariance_weight", self.invariance_weight),
            ("proj_lr_mult", self.proj_lr_mult),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

const ADAM_EPS: f64 = 1e-8;

struct Moments {
    m: Matrix,
    v: Matrix,
}

/// Decoupled-decay Adam. Moment buffers are keyed by parameter id and
/// iterated in id order, so a step is a deterministic function of the
/// (parameters, gradients, step count) triple.
pub struct AdamW {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(config: &TrainConfig) -> Self {
        AdamW {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            weight_decay: config.weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter that received a
    /// gradient. Parameters without gradients keep their moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for param in store.iter_mut() {
            if !param.trainable {
                continue;
            }
            let g = match grads.get(param.id) {
                Some(g) => g,
                None => continue,
            };
            if !g.same_shape(&param.value) {
                return Err(Error::shape(format!(
                    "gradient for {} is {}x{}, parameter is {}x{}",
                    param.name,
                    g.rows(),
                    g.cols(),
                    param.value.rows(),
                    param.value.cols()
                )));
            }
            let slot = self.moments.entry(param.id).or_insert_with(|| Moments {
                m: Matrix::zeros(g.rows(), g.cols()),
                v: Matrix::zeros(g.rows(), g.cols()),
            });
            let lr = self.learning_rate * param.lr_scale;
            let wd = self.weight_decay;
            let (b1, b2) = (self.beta1, self.beta2);
            let mut next = param.value.clone();
            for idx in 0..g.data().len() {
                let gi = g.data()[idx];
                let m = b1 * slot.m.data()[idx] + (1.0 - b1) * gi;
                let v = b2 * slot.v.data()[idx] + (1.0 - b2) * gi * gi;
                slot.m.data_mut()[idx] = m;
                slot.v.data_mut()[idx] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let p = param.value.data()[idx];
                next.data_mut()[idx] = p - lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * p);
            }
            param.value = next;
        }
        Ok(())
    }
}
