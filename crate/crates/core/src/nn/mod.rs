//! Feed-forward mean/variance networks trained with a Gaussian likelihood.

mod activation;
mod graph;
mod matrix;
mod optim;
mod train;

pub use activation::{sigmoid, softplus, Activation};
pub use graph::{
    nll_loss, Dense, Heads, LayerNode, ModelWeights, NetworkGraph, Predictions, SkipEdge, VAR_FLOOR,
};
pub use matrix::Matrix;
pub use optim::{Optimizer, OptimizerState};
pub use train::{
    train, EpochRecord, PlateauSchedule, PlateauStep, TrainConfig, TrainData, TrainOutcome,
    LR_REDUCE_FACTOR, MIN_DELTA, MIN_LR,
};
