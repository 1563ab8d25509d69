//! Bagged regression trees over encoded hyperparameters, with UCB selection
//! and constant-liar batching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hp::{encode_hp, sample_hp, HpConfig, HpSpace};

pub const DEFAULT_TREES: usize = 25;
/// Random candidates scored per acquisition.
pub const CANDIDATE_POOL: usize = 512;
/// Failed evaluations are told as the worst observed score plus this margin.
pub const FAILURE_MARGIN: f64 = 1.0;

const MAX_DEPTH: usize = 32;

#[derive(Clone, Debug)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

/// CART regression tree grown to purity on squared error.
fn grow(xs: &[Vec<f64>], ys: &[f64], idx: &mut [usize], depth: usize) -> Node {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / n;
    if idx.len() < 2 || depth >= MAX_DEPTH || idx.iter().all(|&i| ys[i] == ys[idx[0]]) {
        return Node::Leaf(mean);
    }
    let dims = xs[idx[0]].len();
    let total: f64 = idx.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| ys[i] * ys[i]).sum();
    let parent_sse = total_sq - total * total / n;
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..dims {
        idx.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let (mut sum_l, mut sq_l) = (0.0, 0.0);
        for s in 0..idx.len() - 1 {
            let y = ys[idx[s]];
            sum_l += y;
            sq_l += y * y;
            let (a, b) = (xs[idx[s]][f], xs[idx[s + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (s + 1) as f64;
            let nr = n - nl;
            let (sum_r, sq_r) = (total - sum_l, total_sq - sq_l);
            let sse = (sq_l - sum_l * sum_l / nl) + (sq_r - sum_r * sum_r / nr);
            if best.is_none_or(|(_, _, b)| sse < b - 1e-12) {
                best = Some((f, 0.5 * (a + b), sse));
            }
        }
    }
    match best {
        Some((feature, threshold, sse)) if sse < parent_sse - 1e-12 => {
            let split = partition(idx, |i| xs[i][feature] <= threshold);
            let (l, r) = idx.split_at_mut(split);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(xs, ys, l, depth + 1)),
                right: Box::new(grow(xs, ys, r, depth + 1)),
            }
        }
        _ => Node::Leaf(mean),
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for j in 0..idx.len() {
        if pred(idx[j]) {
            idx.swap(j, k);
            k += 1;
        }
    }
    k
}

/// Surrogate model of validation NLL as a function of training hyperparameters.
///
/// Predictions are the mean and population standard deviation of the
/// per-tree outputs. Refitting is deterministic given the seed and the
/// observation list.
#[derive(Clone, Debug)]
pub struct Surrogate {
    space: HpSpace,
    n_trees: usize,
    seed: u64,
    observations: Vec<(HpConfig, f64)>,
    encoded: Vec<Vec<f64>>,
    trees: Vec<Node>,
}

impl Surrogate {
    pub fn new(space: HpSpace, seed: u64) -> Self {
        Self::with_trees(space, seed, DEFAULT_TREES)
    }

    pub fn with_trees(space: HpSpace, seed: u64, n_trees: usize) -> Self {
        Surrogate {
            space,
            n_trees: n_trees.max(1),
            seed,
            observations: Vec::new(),
            encoded: Vec::new(),
            trees: Vec::new(),
        }
    }

    pub fn observations(&self) -> &[(HpConfig, f64)] {
        &self.observations
    }

    pub fn is_fitted(&self) -> bool {
        !self.trees.is_empty()
    }

    /// Records one evaluation (`+inf` for a failed run) and refits.
    pub fn tell(&mut self, hp: HpConfig, score: f64) {
        self.push(hp, score);
        self.refit();
    }

    pub fn tell_many(&mut self, results: impl IntoIterator<Item = (HpConfig, f64)>) {
        for (hp, score) in results {
            self.push(hp, score);
        }
        self.refit();
    }

    fn push(&mut self, hp: HpConfig, score: f64) {
        let enc = encode_hp(&hp, &self.space).unwrap_or_else(|_| {
            // Out-of-space configs still inform the model; clamp into range.
            let mut clamped = hp.clone();
            clamped.lr = clamped
                .lr
                .clamp(self.space.lr_bounds.0, self.space.lr_bounds.1);
            clamped.batch_size = clamped.batch_size.clamp(1, self.space.b_max);
            clamped.patience_reduce_lr = clamped.patience_reduce_lr.clamp(
                self.space.patience_lr_bounds.0,
                self.space.patience_lr_bounds.1,
            );
            clamped.patience_early_stop = clamped.patience_early_stop.clamp(
                self.space.patience_es_bounds.0,
                self.space.patience_es_bounds.1,
            );
            encode_hp(&clamped, &self.space).expect("clamped into the space")
        });
        self.observations.push((hp, score));
        self.encoded.push(enc);
    }

    fn pop(&mut self) {
        self.observations.pop();
        self.encoded.pop();
    }

    /// Scores used for fitting: failures become worst finite score + margin.
    fn targets(&self) -> Vec<f64> {
        let worst = self.worst_finite().unwrap_or(0.0);
        self.observations
            .iter()
            .map(|(_, s)| {
                if s.is_finite() {
                    *s
                } else {
                    worst + FAILURE_MARGIN
                }
            })
            .collect()
    }

    fn worst_finite(&self) -> Option<f64> {
        self.observations
            .iter()
            .map(|o| o.1)
            .filter(|s| s.is_finite())
            .reduce(f64::max)
    }

    /// Largest fitting target; the constant-liar value.
    pub fn worst_observed(&self) -> Option<f64> {
        self.targets().into_iter().reduce(f64::max)
    }

    fn refit(&mut self) {
        let n = self.observations.len();
        self.trees.clear();
        if n == 0 {
            return;
        }
        let ys = self.targets();
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..self.n_trees {
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            self.trees.push(grow(&self.encoded, &ys, &mut idx, 0));
        }
    }

    /// Mean and standard deviation across trees.
    pub fn predict(&self, hp: &HpConfig) -> (f64, f64) {
        match encode_hp(hp, &self.space) {
            Ok(x) => self.predict_encoded(&x),
            Err(_) => (f64::INFINITY, 0.0),
        }
    }

    fn predict_encoded(&self, x: &[f64]) -> (f64, f64) {
        let k = self.trees.len() as f64;
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let mean = preds.iter().sum::<f64>() / k;
        let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / k;
        (mean, var.max(0.0).sqrt())
    }

    /// Upper confidence bound on improvement of a minimized score.
    pub fn ucb(&self, hp: &HpConfig, kappa: f64) -> f64 {
        let (mu, sigma) = self.predict(hp);
        -mu + kappa * sigma
    }

    /// Proposes `n` configurations, each the UCB maximizer over a fresh random
    /// candidate pool. Falls back to random sampling before any observation.
    pub fn ask<R: Rng + ?Sized>(&self, n: usize, kappa: f64, rng: &mut R) -> Vec<HpConfig> {
        if !self.is_fitted() {
            return (0..n).map(|_| sample_hp(&self.space, rng)).collect();
        }
        let mut work = self.clone();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pool: Vec<HpConfig> = (0..CANDIDATE_POOL)
                .map(|_| sample_hp(&self.space, rng))
                .collect();
            out.push(work.pick_and_lie(&pool, kappa));
        }
        out
    }

    /// Constant-liar selection from fixed candidate lists. The surrogate's own
    /// observations are left untouched.
    pub fn ask_from(&self, pools: &[Vec<HpConfig>], kappa: f64) -> Vec<HpConfig> {
        let mut work = self.clone();
        pools
            .iter()
            .map(|pool| work.pick_and_lie(pool, kappa))
            .collect()
    }

    fn pick_and_lie(&mut self, pool: &[HpConfig], kappa: f64) -> HpConfig {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, hp) in pool.iter().enumerate() {
            let s = self.ucb(hp, kappa);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        let pick = pool[best].clone();
        let lie = self.worst_observed().unwrap_or(0.0);
        self.tell(pick.clone(), lie);
        pick
    }

    /// Removes the most recent observation and refits.
    pub fn retract_last(&mut self) {
        self.pop();
        self.refit();
    }
}
