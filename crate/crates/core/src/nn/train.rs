use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{nll_loss, ModelWeights, NetworkGraph};
use super::matrix::Matrix;
use super::optim::{Optimizer, OptimizerState};
use crate::error::{Error, Result};

/// Multiplier applied to the learning rate when validation loss plateaus.
pub const LR_REDUCE_FACTOR: f64 = 0.5;
pub const MIN_LR: f64 = 1e-6;
/// A validation loss counts as an improvement only if it beats the best by more than this.
pub const MIN_DELTA: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub patience_reduce_lr: usize,
    pub patience_early_stop: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1e-4..=1e-1).contains(&self.learning_rate) {
            return Err(Error::OutOfBounds(format!(
                "learning rate {} outside [1e-4, 1e-1]",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::OutOfBounds("batch size must be positive".into()));
        }
        if !(10..=20).contains(&self.patience_reduce_lr) {
            return Err(Error::OutOfBounds(format!(
                "lr patience {} outside [10, 20]",
                self.patience_reduce_lr
            )));
        }
        if !(20..=30).contains(&self.patience_early_stop) {
            return Err(Error::OutOfBounds(format!(
                "early-stop patience {} outside [20, 30]",
                self.patience_early_stop
            )));
        }
        Ok(())
    }
}

/// Standardized training and validation arrays.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub x_train: Matrix,
    pub y_train: Matrix,
    pub x_valid: Matrix,
    pub y_valid: Matrix,
}

impl TrainData {
    fn check(&self) -> Result<()> {
        for (name, x, y) in [
            ("train", &self.x_train, &self.y_train),
            ("valid", &self.x_valid, &self.y_valid),
        ] {
            if x.rows() == 0 {
                return Err(Error::Empty(format!("{name} split")));
            }
            if x.rows() != y.rows() {
                return Err(Error::Shape {
                    at: format!("{name} targets"),
                    expected: x.rows(),
                    got: y.rows(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss seen.
    pub weights: ModelWeights,
    /// `+inf` when training produced a non-finite loss.
    #[serde(with = "crate::serde_f64")]
    pub valid_nll: f64,
    pub failed: bool,
    pub history: Vec<EpochRecord>,
}

/// What the plateau bookkeeping decided after one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlateauStep {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Reduce-on-plateau and early-stopping counters over validation losses.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    patience_reduce_lr: usize,
    patience_early_stop: usize,
    best: f64,
    wait_lr: usize,
    wait_stop: usize,
}

impl PlateauSchedule {
    pub fn new(patience_reduce_lr: usize, patience_early_stop: usize) -> Self {
        PlateauSchedule {
            patience_reduce_lr,
            patience_early_stop,
            best: f64::INFINITY,
            wait_lr: 0,
            wait_stop: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> PlateauStep {
        let improved = loss < self.best - MIN_DELTA;
        if improved {
            self.best = loss;
            self.wait_lr = 0;
            self.wait_stop = 0;
            return PlateauStep {
                improved,
                reduce_lr: false,
                stop: false,
            };
        }
        self.wait_lr += 1;
        self.wait_stop += 1;
        let reduce_lr = self.wait_lr >= self.patience_reduce_lr;
        if reduce_lr {
            self.wait_lr = 0;
        }
        PlateauStep {
            improved,
            reduce_lr,
            stop: self.wait_stop >= self.patience_early_stop,
        }
    }
}

/// Mini-batch training with checkpointing on the best validation NLL.
///
/// Epoch 0 records the freshly initialized network, so the checkpoint is
/// never worse than the starting point.
pub fn train(graph: &NetworkGraph, cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    cfg.validate()?;
    graph.validate()?;
    data.check()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut weights = graph.init_weights(&mut rng);
    let mut state = OptimizerState::new(cfg.optimizer, weights.num_params());
    let mut schedule = PlateauSchedule::new(cfg.patience_reduce_lr, cfg.patience_early_stop);
    let mut lr = cfg.learning_rate;

    let n = data.x_train.rows();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();

    let failed = |history: Vec<EpochRecord>, weights: ModelWeights| TrainOutcome {
        weights,
        valid_nll: f64::INFINITY,
        failed: true,
        history,
    };

    let train0 = nll_loss(&graph.forward(&weights, &data.x_train)?, &data.y_train);
    let valid0 = nll_loss(&graph.forward(&weights, &data.x_valid)?, &data.y_valid);
    let (train0, valid0) = match (train0, valid0) {
        (Ok(t), Ok(v)) => (t, v),
        _ => return Ok(failed(Vec::new(), weights)),
    };
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: train0,
        valid_loss: valid0,
        lr,
    }];
    schedule.observe(valid0);
    let mut best_weights = weights.clone();
    let mut best_valid = valid0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let xb = data.x_train.select_rows(chunk);
            let yb = data.y_train.select_rows(chunk);
            let (loss, grads) = match graph.loss_and_gradients(&weights, &xb, &yb) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Ok(failed(history, best_weights)),
                Err(e) => return Err(e),
            };
            state.step(&mut weights, &grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n as f64;
        let valid_loss = match graph
            .forward(&weights, &data.x_valid)
            .and_then(|p| nll_loss(&p, &data.y_valid))
        {
            Ok(v) if train_loss.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) => return Ok(failed(history, best_weights)),
            Err(e) => return Err(e),
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            lr,
        });
        if valid_loss < best_valid {
            best_valid = valid_loss;
            best_weights = weights.clone();
        }
        let step = schedule.observe(valid_loss);
        if step.stop {
            break;
        }
        if step.reduce_lr {
            lr = (lr * LR_REDUCE_FACTOR).max(MIN_LR);
        }
    }

    Ok(TrainOutcome {
        weights: best_weights,
        valid_nll: best_valid,
        failed: false,
        history,
    })
}
