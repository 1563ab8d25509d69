//! Training-hyperparameter space: sampling and the numeric encoding consumed
//! by the Bayesian-optimization surrogate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Optimizer, TrainConfig};

/// Length of [`encode_hp`] vectors.
pub const ENCODED_LEN: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub patience_reduce_lr: usize,
    pub patience_early_stop: usize,
}

impl HpConfig {
    pub fn train_config(&self, epochs: usize, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            patience_reduce_lr: self.patience_reduce_lr,
            patience_early_stop: self.patience_early_stop,
            epochs,
            rng_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpSpace {
    #[serde(default = "default_lr_bounds")]
    pub lr_bounds: (f64, f64),
    pub b_max: usize,
    #[serde(default = "default_patience_lr")]
    pub patience_lr_bounds: (usize, usize),
    #[serde(default = "default_patience_es")]
    pub patience_es_bounds: (usize, usize),
}

fn default_lr_bounds() -> (f64, f64) {
    (1e-4, 1e-1)
}

fn default_patience_lr() -> (usize, usize) {
    (10, 20)
}

fn default_patience_es() -> (usize, usize) {
    (20, 30)
}

impl HpSpace {
    pub fn with_b_max(b_max: usize) -> Self {
        HpSpace {
            lr_bounds: default_lr_bounds(),
            b_max,
            patience_lr_bounds: default_patience_lr(),
            patience_es_bounds: default_patience_es(),
        }
    }

    pub fn toy() -> Self {
        Self::with_b_max(32)
    }

    pub fn benchmark() -> Self {
        Self::with_b_max(256)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lr_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(
                "hp.lr_bounds must be positive and ordered".into(),
            ));
        }
        if self.b_max == 0 {
            return Err(Error::Config("hp.b_max must be at least 1".into()));
        }
        if self.patience_lr_bounds.0 > self.patience_lr_bounds.1
            || self.patience_es_bounds.0 > self.patience_es_bounds.1
        {
            return Err(Error::Config("hp patience bounds must be ordered".into()));
        }
        Ok(())
    }

    pub fn contains(&self, hp: &HpConfig) -> bool {
        let in_range = |v: usize, (lo, hi): (usize, usize)| (lo..=hi).contains(&v);
        hp.lr >= self.lr_bounds.0
            && hp.lr <= self.lr_bounds.1
            && (1..=self.b_max).contains(&hp.batch_size)
            && in_range(hp.patience_reduce_lr, self.patience_lr_bounds)
            && in_range(hp.patience_early_stop, self.patience_es_bounds)
    }
}

/// Log-uniform learning rate and batch size, uniform optimizer and patiences.
pub fn sample_hp<R: Rng + ?Sized>(space: &HpSpace, rng: &mut R) -> HpConfig {
    let (lo, hi) = (space.lr_bounds.0.log10(), space.lr_bounds.1.log10());
    let lr = 10f64.powf(if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    });
    let v_hi = (space.b_max as f64).log2();
    let v = if v_hi > 0.0 {
        rng.random_range(0.0..=v_hi)
    } else {
        0.0
    };
    let batch_size = (2f64.powf(v).round() as usize).clamp(1, space.b_max);
    let optimizer = Optimizer::ALL[rng.random_range(0..Optimizer::ALL.len())];
    let patience_reduce_lr =
        rng.random_range(space.patience_lr_bounds.0..=space.patience_lr_bounds.1);
    let patience_early_stop =
        rng.random_range(space.patience_es_bounds.0..=space.patience_es_bounds.1);
    HpConfig {
        lr: lr.clamp(space.lr_bounds.0, space.lr_bounds.1),
        batch_size,
        optimizer,
        patience_reduce_lr,
        patience_early_stop,
    }
}

/// `[log10 lr, log2 batch, one-hot optimizer (7), lr patience, stop patience]`,
/// continuous parts scaled to `[0, 1]`.
pub fn encode_hp(hp: &HpConfig, space: &HpSpace) -> Result<Vec<f64>> {
    if !space.contains(hp) {
        return Err(Error::OutOfBounds(format!(
            "{hp:?} lies outside the hyperparameter space"
        )));
    }
    let unit = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    let mut out = Vec::with_capacity(ENCODED_LEN);
    out.push(unit(
        hp.lr.log10(),
        space.lr_bounds.0.log10(),
        space.lr_bounds.1.log10(),
    ));
    out.push(unit(
        (hp.batch_size as f64).log2(),
        0.0,
        (space.b_max as f64).log2(),
    ));
    let mut one_hot = [0.0; 7];
    one_hot[hp.optimizer.index()] = 1.0;
    out.extend_from_slice(&one_hot);
    let (plo, phi) = space.patience_lr_bounds;
    out.push(unit(hp.patience_reduce_lr as f64, plo as f64, phi as f64));
    let (elo, ehi) = space.patience_es_bounds;
    out.push(unit(hp.patience_early_stop as f64, elo as f64, ehi as f64));
    Ok(out)
}
