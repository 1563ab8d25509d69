//! Architecture search space: a fixed-length integer genome over variable
//! layer nodes and their optional skip connections.
//!
//! Each variable node contributes one categorical gene followed by one binary
//! gene per non-consecutive predecessor node (distance 2, 3, ... up to
//! `max_skip_back + 1`). The connection to the immediately preceding node is
//! the fixed backbone and is not encoded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerNode, NetworkGraph, SkipEdge};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpaceConfig {
    pub num_variable_nodes: usize,
    #[serde(default = "default_units")]
    pub units_choices: Vec<usize>,
    #[serde(default = "default_activations")]
    pub activation_choices: Vec<Activation>,
    #[serde(default = "default_skip_back")]
    pub max_skip_back: usize,
}

fn default_units() -> Vec<usize> {
    (1..=16).map(|i| 16 * i).collect()
}

fn default_activations() -> Vec<Activation> {
    Activation::ALL.to_vec()
}

fn default_skip_back() -> usize {
    3
}

impl ArchSpaceConfig {
    pub fn with_nodes(num_variable_nodes: usize) -> Self {
        ArchSpaceConfig {
            num_variable_nodes,
            units_choices: default_units(),
            activation_choices: default_activations(),
            max_skip_back: default_skip_back(),
        }
    }

    /// Three variable nodes, used for one-dimensional problems.
    pub fn toy() -> Self {
        Self::with_nodes(3)
    }

    /// Five variable nodes, used for tabular benchmarks.
    pub fn benchmark() -> Self {
        Self::with_nodes(5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_variable_nodes == 0 {
            return Err(Error::Config(
                "arch.num_variable_nodes must be positive".into(),
            ));
        }
        if self.units_choices.is_empty() || self.units_choices.contains(&0) {
            return Err(Error::Config(
                "arch.units_choices must be positive counts".into(),
            ));
        }
        if self.activation_choices.is_empty() {
            return Err(Error::Config("arch.activation_choices is empty".into()));
        }
        Ok(())
    }

    /// Number of values of a layer gene; the last value is the identity layer.
    pub fn layer_cardinality(&self) -> usize {
        self.units_choices.len() * self.activation_choices.len() + 1
    }

    pub fn identity_value(&self) -> usize {
        self.layer_cardinality() - 1
    }

    /// Skip genes owned by variable node `node` (0-based).
    pub fn skip_bits(&self, node: usize) -> usize {
        node.saturating_sub(1).min(self.max_skip_back)
    }

    /// Cardinality of every gene, in genome order.
    pub fn cardinalities(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(genome_length(self));
        for node in 0..self.num_variable_nodes {
            out.push(self.layer_cardinality());
            out.extend(std::iter::repeat_n(2, self.skip_bits(node)));
        }
        out
    }

    /// Layer kind for a layer-gene value.
    pub fn layer_for(&self, value: usize) -> LayerNode {
        if value >= self.identity_value() {
            return LayerNode::Identity;
        }
        let n_units = self.units_choices.len();
        LayerNode::Dense {
            units: self.units_choices[value % n_units],
            activation: self.activation_choices[value / n_units],
        }
    }
}

pub fn genome_length(cfg: &ArchSpaceConfig) -> usize {
    (0..cfg.num_variable_nodes)
        .map(|node| 1 + cfg.skip_bits(node))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchGenome(pub Vec<usize>);

impl ArchGenome {
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, cfg: &ArchSpaceConfig) -> Result<()> {
        let card = cfg.cardinalities();
        if self.0.len() != card.len() {
            return Err(Error::Shape {
                at: "genome".into(),
                expected: card.len(),
                got: self.0.len(),
            });
        }
        for (i, (v, c)) in self.0.iter().zip(&card).enumerate() {
            if v >= c {
                return Err(Error::OutOfBounds(format!(
                    "genome position {i} has value {v}, cardinality {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn hamming(&self, other: &ArchGenome) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
            + self.0.len().abs_diff(other.0.len())
    }
}

pub fn random_genome<R: Rng + ?Sized>(cfg: &ArchSpaceConfig, rng: &mut R) -> ArchGenome {
    ArchGenome(
        cfg.cardinalities()
            .into_iter()
            .map(|c| rng.random_range(0..c))
            .collect(),
    )
}

/// Changes exactly one gene to a different value. Genes with a single value
/// are never picked.
pub fn mutate<R: Rng + ?Sized>(
    genome: &ArchGenome,
    cfg: &ArchSpaceConfig,
    rng: &mut R,
) -> Result<ArchGenome> {
    genome.validate(cfg)?;
    let card = cfg.cardinalities();
    let mutable: Vec<usize> = (0..card.len()).filter(|&i| card[i] > 1).collect();
    if mutable.is_empty() {
        return Err(Error::Config("genome has no mutable position".into()));
    }
    let pos = mutable[rng.random_range(0..mutable.len())];
    let old = genome.0[pos];
    let mut new = rng.random_range(0..card[pos] - 1);
    if new >= old {
        new += 1;
    }
    let mut child = genome.clone();
    child.0[pos] = new;
    Ok(child)
}

/// Builds the network described by `genome`. Every in-range genome decodes.
pub fn decode(
    genome: &ArchGenome,
    cfg: &ArchSpaceConfig,
    input_dim: usize,
    output_dim: usize,
) -> Result<NetworkGraph> {
    genome.validate(cfg)?;
    let mut layers = Vec::with_capacity(cfg.num_variable_nodes);
    let mut skips = Vec::new();
    let mut genes = genome.0.iter().copied();
    for node in 0..cfg.num_variable_nodes {
        layers.push(cfg.layer_for(genes.next().expect("validated length")));
        for back in 0..cfg.skip_bits(node) {
            if genes.next().expect("validated length") == 1 {
                skips.push(SkipEdge {
                    source: node - 2 - back,
                    target: node,
                });
            }
        }
    }
    let graph = NetworkGraph {
        input_dim,
        output_dim,
        layers,
        skips,
    };
    graph.validate()?;
    Ok(graph)
}

/// Integer embedding used for diversity scoring: the genome itself.
pub fn embed(genome: &ArchGenome) -> Vec<usize> {
    genome.0.clone()
}
