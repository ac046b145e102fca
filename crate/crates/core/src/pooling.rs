//! Noise reduction by neuron duplication.
//!
//! Each neuron of a pooled layer is replaced by `m` copies that receive the
//! same input; the copies of neuron `i` sit at indices `i*m .. i*m + m`. The
//! outgoing matrix repeats each row `m` times divided by `m`, so the next
//! layer sees the average of the group. Without noise the pooled network
//! computes the same function; with independent noise per copy the
//! averaged noise variance drops by a factor `m`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mathcore::Matrix;
use crate::network::{DenseNetwork, NetworkTopology};
use crate::noise::{evaluate_noisy, NoiseSpec, NoisyAccuracy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub m: usize,
    pub layers: BTreeSet<usize>,
}

impl PoolSpec {
    pub fn new(m: usize, layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            m,
            layers: layers.into_iter().collect(),
        }
    }

    /// Pool every hidden layer.
    pub fn all_hidden(m: usize, topology: &NetworkTopology) -> Self {
        Self::new(m, topology.hidden_layers())
    }

    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Spec("pool size m must be >= 1".into()));
        }
        if let Some(&bad) = self.layers.iter().find(|&&l| !topology.is_hidden(l)) {
            return Err(Error::Spec(format!(
                "cannot pool layer {bad} of {topology}: only hidden layers 2..={} can be pooled",
                topology.depth() - 1
            )));
        }
        Ok(())
    }
}

pub fn apply_pooling(net: &DenseNetwork, spec: &PoolSpec) -> Result<DenseNetwork> {
    let topo = net.topology();
    spec.validate(topo)?;
    if spec.m == 1 || spec.layers.is_empty() {
        return Ok(net.clone());
    }
    let m = spec.m;
    let mult = |layer: usize| if spec.layers.contains(&layer) { m } else { 1 };

    let sizes: Vec<usize> = topo.sizes().iter().enumerate().map(|(k, &n)| n * mult(k + 1)).collect();
    let mut weights = Vec::with_capacity(net.weights().len());
    for layer in 2..=topo.depth() {
        let w = net.matrix(layer);
        let (rm, cm) = (mult(layer - 1), mult(layer));
        let scale = rm as f64;
        let cols = w.cols() * cm;
        let mut data = Vec::with_capacity(w.rows() * rm * cols);
        for r in 0..w.rows() {
            let mut row = Vec::with_capacity(cols);
            for &v in w.row(r) {
                let v = if rm > 1 { v / scale } else { v };
                row.extend(std::iter::repeat_n(v, cm));
            }
            for _ in 0..rm {
                data.extend_from_slice(&row);
            }
        }
        weights.push(Matrix::new(w.rows() * rm, cols, data)?);
    }
    DenseNetwork::new(NetworkTopology::new(sizes)?, weights)
}

/// Pools `net`, then evaluates it under `noise` exactly as
/// [`evaluate_noisy`] does. Every copy in a noisy pooled layer receives
/// its own draws.
pub fn evaluate_pooled(
    net: &DenseNetwork,
    data: &LabeledDataset,
    noise: &NoiseSpec,
    pool: &PoolSpec,
    repetitions: usize,
    seed: u64,
) -> Result<NoisyAccuracy> {
    let pooled = apply_pooling(net, pool)?;
    evaluate_noisy(&pooled, data, noise, repetitions, seed)
}
