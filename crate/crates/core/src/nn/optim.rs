use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::ModelWeights;
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMSPROP_RHO: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-7;
const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-7;
const ADAGRAD_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Rmsprop,
    Adagrad,
    Adam,
    Adadelta,
    Adamax,
    Nadam,
}

impl Optimizer {
    /// Fixed order used for one-hot encoding.
    pub const ALL: [Optimizer; 7] = [
        Optimizer::Sgd,
        Optimizer::Rmsprop,
        Optimizer::Adagrad,
        Optimizer::Adam,
        Optimizer::Adadelta,
        Optimizer::Adamax,
        Optimizer::Nadam,
    ];

    pub fn index(self) -> usize {
        Optimizer::ALL
            .iter()
            .position(|o| *o == self)
            .expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Rmsprop => "rmsprop",
            Optimizer::Adagrad => "adagrad",
            Optimizer::Adam => "adam",
            Optimizer::Adadelta => "adadelta",
            Optimizer::Adamax => "adamax",
            Optimizer::Nadam => "nadam",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Optimizer::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::UnknownOptimizer(s.to_string()))
    }
}

/// Per-parameter moment buffers for one optimizer.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, num_params: usize) -> Self {
        OptimizerState {
            kind,
            step: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }

    pub fn kind(&self) -> Optimizer {
        self.kind
    }

    /// Applies one update in place.
    pub fn step(
        &mut self,
        weights: &mut ModelWeights,
        grads: &ModelWeights,
        lr: f64,
    ) -> Result<()> {
        let n = weights.num_params();
        if n != self.first.len() || grads.num_params() != n {
            return Err(Error::Shape {
                at: "optimizer state".into(),
                expected: self.first.len(),
                got: n,
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let mut offset = 0;
        for (w, g) in weights.blocks_mut().into_iter().zip(grads.blocks()) {
            let len = w.len();
            let m = &mut self.first[offset..offset + len];
            let v = &mut self.second[offset..offset + len];
            update(self.kind, w, g, m, v, lr, t);
            offset += len;
        }
        Ok(())
    }
}

fn update(
    kind: Optimizer,
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    t: f64,
) {
    match kind {
        Optimizer::Sgd => {
            for (w, g) in w.iter_mut().zip(g) {
                *w -= lr * g;
            }
        }
        Optimizer::Rmsprop => {
            for i in 0..w.len() {
                v[i] = RMSPROP_RHO * v[i] + (1.0 - RMSPROP_RHO) * g[i] * g[i];
                w[i] -= lr * g[i] / (v[i].sqrt() + RMSPROP_EPS);
            }
        }
        Optimizer::Adagrad => {
            for i in 0..w.len() {
                v[i] += g[i] * g[i];
                w[i] -= lr * g[i] / (v[i].sqrt() + ADAGRAD_EPS);
            }
        }
        Optimizer::Adam => {
            let c1 = 1.0 - ADAM_BETA1.powf(t);
            let c2 = 1.0 - ADAM_BETA2.powf(t);
            for i in 0..w.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        Optimizer::Adadelta => {
            // m accumulates squared gradients, v squared updates
            for i in 0..w.len() {
                m[i] = ADADELTA_RHO * m[i] + (1.0 - ADADELTA_RHO) * g[i] * g[i];
                let delta = (v[i] + ADADELTA_EPS).sqrt() / (m[i] + ADADELTA_EPS).sqrt() * g[i];
                v[i] = ADADELTA_RHO * v[i] + (1.0 - ADADELTA_RHO) * delta * delta;
                w[i] -= lr * delta;
            }
        }
        Optimizer::Adamax => {
            let c1 = 1.0 - ADAM_BETA1.powf(t);
            for i in 0..w.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = (ADAM_BETA2 * v[i]).max(g[i].abs());
                w[i] -= lr / c1 * m[i] / (v[i] + ADAM_EPS);
            }
        }
        Optimizer::Nadam => {
            let c1 = 1.0 - ADAM_BETA1.powf(t);
            let c1_next = 1.0 - ADAM_BETA1.powf(t + 1.0);
            let c2 = 1.0 - ADAM_BETA2.powf(t);
            for i in 0..w.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_bar = ADAM_BETA1 * m[i] / c1_next + (1.0 - ADAM_BETA1) * g[i] / c1;
                w[i] -= lr * m_bar / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}
