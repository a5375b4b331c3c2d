//! Shared training plumbing: train/validation split, minibatch stream, loss log.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{real, Parameters, Real};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Passes over the training split; batches run across epoch boundaries, so the step
    /// count is ⌈epochs · n_train / batch⌉.
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Log a loss record every this many steps (and after the last step).
    pub log_every: usize,
    /// Return an exponential moving average of the weights instead of the last iterate.
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch == 0 || self.epochs == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter(
                "batch, epochs and log_every must be positive".into(),
            ));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidParameter(format!("EMA decay must lie in [0,1), got {d}")));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParameter(format!(
                "validation fraction must lie in [0,1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        (self.epochs * n_train).div_ceil(self.batch).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: f64,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: usize,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub records: Vec<LossRecord>,
}

/// Seeded split; the validation set takes ⌊n · fraction⌋ items.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, 0));
    let n_val = (n as f64 * fraction).floor() as usize;
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Endless sequence of seeded permutations of the training indices.
pub(crate) struct BatchStream {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl BatchStream {
    pub fn new(items: Vec<usize>, seed: u64) -> Self {
        let mut s = Self {
            order: items.clone(),
            items,
            pos: 0,
            rng: stream(seed, 0),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.copy_from_slice(&self.items);
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Shadow copy of the parameters, averaged with decay min(d, (1+k)/(10+k)) at update k.
pub(crate) struct Ema<F> {
    decay: f64,
    shadow: Vec<F>,
    updates: usize,
}

impl<F: Real> Ema<F> {
    pub fn new<P: Parameters<F>>(decay: f64, params: &P) -> Self {
        Self {
            decay,
            shadow: params.to_flat(),
            updates: 0,
        }
    }

    pub fn update<P: Parameters<F>>(&mut self, params: &P) {
        let k = self.updates as f64;
        let d: F = real(self.decay.min((1.0 + k) / (10.0 + k)));
        let one_minus = F::one() - d;
        let mut i = 0;
        for t in params.tensors() {
            for &v in t {
                self.shadow[i] = d * self.shadow[i] + one_minus * v;
                i += 1;
            }
        }
        self.updates += 1;
    }

    pub fn apply<P: Parameters<F>>(&self, params: &mut P) -> Result<()> {
        params.load_flat(&self.shadow)
    }
}

pub(crate) fn check_loss(loss: f64, step: usize, epoch: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("loss became {loss} at step {step} (epoch {epoch:.2}); aborting");
        Err(Error::Diverged {
            epoch: epoch.floor() as usize,
            step,
            loss,
        })
    }
}
