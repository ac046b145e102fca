//! Fixtures shared by the benchmarks.

use neuronoise_core::dataset::{synthetic_dataset, LabeledDataset, Split};
use neuronoise_core::training::init_weights;
use neuronoise_core::{DenseNetwork, NetworkTopology};

/// Glorot-initialised network with MNIST-sized input and output.
pub fn mnist_shaped(hidden: &[usize]) -> DenseNetwork {
    init_weights(&NetworkTopology::mnist(hidden).expect("valid sizes"), 1)
}

/// Blob dataset with MNIST dimensions.
pub fn mnist_shaped_data(n: usize) -> LabeledDataset {
    synthetic_dataset(1, n, 784, 10, Split::Test).expect("n >= classes")
}
