use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, softplus, Activation};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Floor added to the softplus variance head so the likelihood never divides by zero.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerNode {
    Identity,
    Dense {
        units: usize,
        activation: Activation,
    },
}

/// Adds the projected output of layer `source` to the input of layer `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEdge {
    pub source: usize,
    pub target: usize,
}

/// Feed-forward backbone of variable layers with projected skip connections,
/// topped by a linear mean head and a softplus variance head.
///
/// Layer `i` receives `h[i-1] + sum_s P_s h[s]` over the skip edges targeting
/// it, where `h[-1]` is the network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerNode>,
    pub skips: Vec<SkipEdge>,
}

impl NetworkGraph {
    /// Plain chain with no skip edges.
    pub fn chain(input_dim: usize, output_dim: usize, layers: Vec<LayerNode>) -> Self {
        NetworkGraph {
            input_dim,
            output_dim,
            layers,
            skips: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        for node in &self.layers {
            if let LayerNode::Dense { units: 0, .. } = node {
                return Err(Error::Config("dense layer with zero units".into()));
            }
        }
        for e in &self.skips {
            let back = e.target.saturating_sub(e.source);
            if e.target >= self.layers.len() || !(2..=4).contains(&back) {
                return Err(Error::Config(format!(
                    "invalid skip edge {} -> {}",
                    e.source, e.target
                )));
            }
        }
        Ok(())
    }

    /// Output width of every layer.
    pub fn widths(&self) -> Vec<usize> {
        let mut prev = self.input_dim;
        self.layers
            .iter()
            .map(|node| {
                if let LayerNode::Dense { units, .. } = node {
                    prev = *units;
                }
                prev
            })
            .collect()
    }

    fn in_width(&self, widths: &[usize], layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            widths[layer - 1]
        }
    }

    fn last_width(&self, widths: &[usize]) -> usize {
        widths.last().copied().unwrap_or(self.input_dim)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelWeights {
        let widths = self.widths();
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, node)| match node {
                LayerNode::Identity => Dense::empty(),
                LayerNode::Dense { units, .. } => {
                    Dense::glorot(*units, self.in_width(&widths, i), rng)
                }
            })
            .collect();
        let skips = self
            .skips
            .iter()
            .map(|e| glorot(self.in_width(&widths, e.target), widths[e.source], rng))
            .collect();
        let last = self.last_width(&widths);
        ModelWeights {
            layers,
            skips,
            heads: Heads {
                mean: Dense::glorot(self.output_dim, last, rng),
                var: Dense::glorot(self.output_dim, last, rng),
            },
        }
    }

    /// Checks every weight block against the shapes implied by the graph.
    pub fn check_weights(&self, w: &ModelWeights) -> Result<()> {
        let widths = self.widths();
        let shape = |at: String, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.rows() != rows {
                return Err(Error::Shape {
                    at,
                    expected: rows,
                    got: m.rows(),
                });
            }
            if m.cols() != cols && rows > 0 {
                return Err(Error::Shape {
                    at,
                    expected: cols,
                    got: m.cols(),
                });
            }
            Ok(())
        };
        if w.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                at: "layer list".into(),
                expected: self.layers.len(),
                got: w.layers.len(),
            });
        }
        for (i, (node, p)) in self.layers.iter().zip(&w.layers).enumerate() {
            let (rows, cols) = match node {
                LayerNode::Identity => (0, 0),
                LayerNode::Dense { units, .. } => (*units, self.in_width(&widths, i)),
            };
            shape(format!("layer {i} weights"), &p.w, rows, cols)?;
            if p.b.len() != rows {
                return Err(Error::Shape {
                    at: format!("layer {i} bias"),
                    expected: rows,
                    got: p.b.len(),
                });
            }
        }
        if w.skips.len() != self.skips.len() {
            return Err(Error::Shape {
                at: "skip list".into(),
                expected: self.skips.len(),
                got: w.skips.len(),
            });
        }
        for (e, p) in self.skips.iter().zip(&w.skips) {
            shape(
                format!("skip {}->{} projection", e.source, e.target),
                p,
                self.in_width(&widths, e.target),
                widths[e.source],
            )?;
        }
        let last = self.last_width(&widths);
        for (name, head) in [
            ("mean head", &w.heads.mean),
            ("variance head", &w.heads.var),
        ] {
            shape(name.to_string(), &head.w, self.output_dim, last)?;
            if head.b.len() != self.output_dim {
                return Err(Error::Shape {
                    at: format!("{name} bias"),
                    expected: self.output_dim,
                    got: head.b.len(),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, w: &ModelWeights, x: &Matrix) -> Result<Predictions> {
        Ok(self.forward_cached(w, x)?.predictions())
    }

    fn forward_cached(&self, w: &ModelWeights, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape {
                at: "input layer".into(),
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        self.check_weights(w)?;
        let mut merged: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Option<Matrix>> = Vec::with_capacity(self.layers.len());
        let mut out: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (i, node) in self.layers.iter().enumerate() {
            let mut m = if i == 0 {
                x.clone()
            } else {
                out[i - 1].clone()
            };
            for (e, p) in self.skips.iter().zip(&w.skips) {
                if e.target == i {
                    m.add_projected(&out[e.source], p);
                }
            }
            match node {
                LayerNode::Identity => {
                    out.push(m.clone());
                    pre.push(None);
                }
                LayerNode::Dense { activation, .. } => {
                    let p = &w.layers[i];
                    let z = m.affine(&p.w, &p.b);
                    let mut h = z.clone();
                    for v in h.data_mut() {
                        *v = activation.apply(*v);
                    }
                    out.push(h);
                    pre.push(Some(z));
                }
            }
            merged.push(m);
        }
        let top = out.last().unwrap_or(x);
        let mu = top.affine(&w.heads.mean.w, &w.heads.mean.b);
        let raw = top.affine(&w.heads.var.w, &w.heads.var.b);
        Ok(ForwardCache {
            merged,
            pre,
            out,
            mu,
            raw,
        })
    }

    /// Mean NLL over all targets together with its exact gradient.
    pub fn loss_and_gradients(
        &self,
        w: &ModelWeights,
        x: &Matrix,
        y: &Matrix,
    ) -> Result<(f64, ModelWeights)> {
        let cache = self.forward_cached(w, x)?;
        let pred = cache.predictions();
        let loss = nll_loss(&pred, y)?;

        let n = (y.rows() * y.cols()) as f64;
        let mut d_mu = Matrix::zeros(y.rows(), y.cols());
        let mut d_raw = Matrix::zeros(y.rows(), y.cols());
        for k in 0..y.data().len() {
            let var = pred.var.data()[k];
            let resid = y.data()[k] - pred.mu.data()[k];
            d_mu.data_mut()[k] = -resid / var / n;
            let d_var = (0.5 / var - 0.5 * resid * resid / (var * var)) / n;
            d_raw.data_mut()[k] = d_var * sigmoid(cache.raw.data()[k]);
        }

        let mut grad = w.zeros_like();
        let top = cache.out.last().unwrap_or(x);
        grad.heads.mean.accumulate(&d_mu, top);
        grad.heads.var.accumulate(&d_raw, top);

        let widths = self.widths();
        let mut d_out: Vec<Matrix> = widths
            .iter()
            .map(|&wd| Matrix::zeros(x.rows(), wd))
            .collect();
        if let Some(d_top) = d_out.last_mut() {
            d_top.add_backprop(&d_mu, &w.heads.mean.w);
            d_top.add_backprop(&d_raw, &w.heads.var.w);
        }

        for i in (0..self.layers.len()).rev() {
            let d_h = std::mem::take(&mut d_out[i]);
            let d_merged = match self.layers[i] {
                LayerNode::Identity => d_h,
                LayerNode::Dense { activation, .. } => {
                    let z = cache.pre[i]
                        .as_ref()
                        .expect("dense layer caches its pre-activation");
                    let h = &cache.out[i];
                    let mut d_z = d_h;
                    for ((d, zv), hv) in d_z.data_mut().iter_mut().zip(z.data()).zip(h.data()) {
                        *d *= activation.derivative(*zv, *hv);
                    }
                    grad.layers[i].accumulate(&d_z, &cache.merged[i]);
                    let mut d_m = Matrix::zeros(x.rows(), self.in_width(&widths, i));
                    d_m.add_backprop(&d_z, &w.layers[i].w);
                    d_m
                }
            };
            for (k, e) in self.skips.iter().enumerate() {
                if e.target == i {
                    grad.skips[k].add_outer(&d_merged, &cache.out[e.source]);
                    d_out[e.source].add_backprop(&d_merged, &w.skips[k]);
                }
            }
            if i > 0 {
                d_out[i - 1].add_assign(&d_merged);
            }
        }
        Ok((loss, grad))
    }
}

struct ForwardCache {
    merged: Vec<Matrix>,
    pre: Vec<Option<Matrix>>,
    out: Vec<Matrix>,
    mu: Matrix,
    raw: Matrix,
}

impl ForwardCache {
    fn predictions(&self) -> Predictions {
        let mut var = self.raw.clone();
        for v in var.data_mut() {
            *v = softplus(*v) + VAR_FLOOR;
        }
        Predictions {
            mu: self.mu.clone(),
            var,
        }
    }
}

/// Per-row Gaussian predictive mean and variance, `(rows, output_dim)` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub mu: Matrix,
    pub var: Matrix,
}

/// Mean Gaussian negative log-likelihood over every target entry, including
/// the `0.5 ln(2 pi)` constant.
pub fn nll_loss(pred: &Predictions, y: &Matrix) -> Result<f64> {
    if pred.mu.rows() != y.rows() || pred.mu.cols() != y.cols() {
        return Err(Error::Shape {
            at: "nll targets".into(),
            expected: pred.mu.rows() * pred.mu.cols(),
            got: y.rows() * y.cols(),
        });
    }
    crate::metrics::nll_score(pred.mu.data(), pred.var.data(), y.data())
}

/// Affine block: `w` is `(out, in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn empty() -> Self {
        Dense {
            w: Matrix::zeros(0, 0),
            b: Vec::new(),
        }
    }

    fn glorot<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        Dense {
            w: glorot(out, inp, rng),
            b: vec![0.0; out],
        }
    }

    fn accumulate(&mut self, delta: &Matrix, input: &Matrix) {
        self.w.add_outer(delta, input);
        for r in 0..delta.rows() {
            for (b, d) in self.b.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
    }
}

fn glorot<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (out + inp) as f64).sqrt();
    let data = (0..out * inp)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(out, inp, data).expect("sized by construction")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    pub mean: Dense,
    pub var: Dense,
}

/// All trainable parameters of a network. Identity layers hold empty blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<Dense>,
    pub skips: Vec<Matrix>,
    pub heads: Heads,
}

impl ModelWeights {
    pub fn zeros_like(&self) -> Self {
        let zero = |d: &Dense| Dense {
            w: Matrix::zeros(d.w.rows(), d.w.cols()),
            b: vec![0.0; d.b.len()],
        };
        ModelWeights {
            layers: self.layers.iter().map(zero).collect(),
            skips: self
                .skips
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            heads: Heads {
                mean: zero(&self.heads.mean),
                var: zero(&self.heads.var),
            },
        }
    }

    /// Parameter blocks in a fixed order shared by `blocks_mut`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.data());
            out.push(l.b.as_slice());
        }
        for s in &self.skips {
            out.push(s.data());
        }
        for h in [&self.heads.mean, &self.heads.var] {
            out.push(h.w.data());
            out.push(h.b.as_slice());
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.data_mut());
            out.push(l.b.as_mut_slice());
        }
        for s in &mut self.skips {
            out.push(s.data_mut());
        }
        let Heads { mean, var } = &mut self.heads;
        for h in [mean, var] {
            out.push(h.w.data_mut());
            out.push(h.b.as_mut_slice());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("serializing weights", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::json("parsing weights", e))
    }
}
