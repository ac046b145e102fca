//! Internal-noise simulation for trained feedforward sigmoid networks.
//!
//! Layers are numbered from 1: layer 1 is the input, layers `2..L-1` are
//! sigmoid hidden layers and layer `L` is the softmax output. `W^n` maps
//! layer `n-1` to layer `n` and has shape `N_{n-1} x N_n`; there are no
//! biases.

pub mod analysis;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod mathcore;
pub mod network;
pub mod noise;
pub mod pooling;
pub mod training;

pub use analysis::{variance_amplification_estimate, weight_stats, WeightStats};
pub use dataset::{load_idx, load_mnist, synthetic_dataset, LabeledDataset, Split};
pub use error::{Error, Result};
pub use experiment::{
    compare_curves, run_sweep, Grouping, OrderingReport, SweepConfig, SweepModel, SweepResult, SweepRow, Verdict,
};
pub use mathcore::{derive_seed, mat_vec, GaussianSource, Matrix};
pub use network::{accuracy, forward_clean, predict, DenseNetwork, ForwardTrace, NetworkTopology};
pub use noise::{evaluate_noisy, forward_noisy, NoiseKind, NoiseSpec, NoiseStage, NoisyAccuracy};
pub use pooling::{apply_pooling, evaluate_pooled, PoolSpec};
pub use training::{train, TrainConfig, TrainReport};
