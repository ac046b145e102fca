//! Bias-free feedforward networks with sigmoid hidden layers and a softmax
//! readout.
//!
//! Layers are numbered from 1: layer 1 is the linear input layer, layers
//! `2..L-1` are hidden, layer `L` is the output. The matrix feeding layer
//! `n` is `W^n` with shape `N_{n-1} x N_n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mathcore::{mat_vec_into, Matrix};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkTopology {
    sizes: Vec<usize>,
}

impl NetworkTopology {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidValue(format!(
                "a network needs at least an input and an output layer, got {} layer(s)",
                sizes.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidValue(format!("layer sizes must be >= 1: {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    /// MNIST-shaped topology: 784 inputs, the given hidden sizes, 10 outputs.
    pub fn mnist(hidden: &[usize]) -> Result<Self> {
        let mut sizes = vec![784];
        sizes.extend_from_slice(hidden);
        sizes.push(10);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of layers `L`, input and output included.
    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    /// Size of 1-based layer `n`.
    pub fn size(&self, layer: usize) -> usize {
        self.sizes[layer - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    /// Hidden layer numbers, `2..=L-1`.
    pub fn hidden_layers(&self) -> std::ops::RangeInclusive<usize> {
        2..=self.depth() - 1
    }

    pub fn is_hidden(&self, layer: usize) -> bool {
        layer >= 2 && layer < self.depth()
    }

    /// Dash-joined sizes, e.g. `784-20-10`.
    pub fn id(&self) -> String {
        self.sizes.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
    }
}

impl std::fmt::Display for NetworkTopology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id())
    }
}

impl std::str::FromStr for NetworkTopology {
    type Err = Error;

    /// Accepts comma- or dash-separated sizes: `784,20,10` or `784-20-10`.
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split([',', '-'])
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidValue(format!("bad layer size {p:?} in topology {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    topology: NetworkTopology,
    weights: Vec<Matrix>,
}

impl DenseNetwork {
    pub fn new(topology: NetworkTopology, weights: Vec<Matrix>) -> Result<Self> {
        let sizes = topology.sizes();
        if weights.len() != sizes.len() - 1 {
            return Err(Error::shape("weight matrix count", sizes.len() - 1, weights.len()));
        }
        for (k, w) in weights.iter().enumerate() {
            if w.rows() != sizes[k] {
                return Err(Error::shape("weight matrix rows", sizes[k], w.rows()));
            }
            if w.cols() != sizes[k + 1] {
                return Err(Error::shape("weight matrix cols", sizes[k + 1], w.cols()));
            }
        }
        Ok(Self { topology, weights })
    }

    pub fn zeros(topology: NetworkTopology) -> Self {
        let weights = topology.sizes().windows(2).map(|p| Matrix::zeros(p[0], p[1])).collect();
        Self { topology, weights }
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    /// `W^2 .. W^L` in order.
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    /// `W^n`, the matrix feeding 1-based layer `n` (`2 <= n <= L`).
    pub fn matrix(&self, layer: usize) -> &Matrix {
        assert!(
            layer >= 2 && layer <= self.topology.depth(),
            "no matrix feeds layer {layer}"
        );
        &self.weights[layer - 2]
    }

    pub fn into_parts(self) -> (NetworkTopology, Vec<Matrix>) {
        (self.topology, self.weights)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum()
    }
}

/// Logistic function. Results are kept inside the open interval `(0, 1)`:
/// where the exact value rounds to 0 or 1 in `f64` it is replaced by the
/// nearest representable value inside the interval.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn sigmoid_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = sigmoid_scalar(*x));
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-layer signals of one forward pass.
///
/// `activations[k]` is the output of layer `k + 1`; `preactivations[k]` is
/// the weighted input `x̃` of layer `k + 2` (the input layer has none).
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub preactivations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn activation(&self, layer: usize) -> &[f64] {
        &self.activations[layer - 1]
    }

    pub fn preactivation(&self, layer: usize) -> Option<&[f64]> {
        layer
            .checked_sub(2)
            .and_then(|k| self.preactivations.get(k))
            .map(Vec::as_slice)
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has layers")
    }

    pub fn predicted_class(&self) -> usize {
        argmax(self.output())
    }

    /// Equality of every stored value bit for bit.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        fn same(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
        }
        same(&self.preactivations, &other.preactivations) && same(&self.activations, &other.activations)
    }
}

pub(crate) fn check_input(net: &DenseNetwork, x: &[f64]) -> Result<()> {
    let n = net.topology().input_dim();
    if x.len() != n {
        return Err(Error::shape("network input length", n, x.len()));
    }
    Ok(())
}

/// Noise-free forward pass.
pub fn forward_clean(net: &DenseNetwork, x: &[f64]) -> Result<ForwardTrace> {
    check_input(net, x)?;
    let depth = net.topology().depth();
    let mut activations = Vec::with_capacity(depth);
    let mut preactivations = Vec::with_capacity(depth - 1);
    activations.push(x.to_vec());
    for (k, w) in net.weights().iter().enumerate() {
        let mut pre = vec![0.0; w.cols()];
        mat_vec_into(w, &activations[k], &mut pre)?;
        let mut act = pre.clone();
        if k + 2 == depth {
            softmax_in_place(&mut act);
        } else {
            sigmoid_in_place(&mut act);
        }
        preactivations.push(pre);
        activations.push(act);
    }
    Ok(ForwardTrace {
        preactivations,
        activations,
    })
}

pub fn predict(net: &DenseNetwork, x: &[f64]) -> Result<usize> {
    check_input(net, x)?;
    let mut scratch = Scratch::new(net);
    Ok(scratch.classify(net, x))
}

/// Reusable buffers for allocation-free classification.
pub(crate) struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(net: &DenseNetwork) -> Self {
        let widest = net.topology().sizes().iter().copied().max().unwrap_or(0);
        Self {
            a: Vec::with_capacity(widest),
            b: Vec::with_capacity(widest),
        }
    }

    /// Same arithmetic as [`forward_clean`], without the trace. The caller
    /// has checked the input length.
    pub(crate) fn classify(&mut self, net: &DenseNetwork, x: &[f64]) -> usize {
        let depth = net.topology().depth();
        self.a.clear();
        self.a.extend_from_slice(x);
        for (k, w) in net.weights().iter().enumerate() {
            self.b.clear();
            self.b.resize(w.cols(), 0.0);
            mat_vec_into(w, &self.a, &mut self.b).expect("shapes validated at construction");
            if k + 2 == depth {
                softmax_in_place(&mut self.b);
            } else {
                sigmoid_in_place(&mut self.b);
            }
            std::mem::swap(&mut self.a, &mut self.b);
        }
        argmax(&self.a)
    }
}

pub(crate) fn check_dataset(net: &DenseNetwork, data: &LabeledDataset) -> Result<()> {
    let topo = net.topology();
    if data.dim() != topo.input_dim() {
        return Err(Error::shape(
            "dataset input dim vs network input layer",
            topo.input_dim(),
            data.dim(),
        ));
    }
    if data.classes() > topo.classes() {
        return Err(Error::shape(
            "dataset classes vs network output layer",
            topo.classes(),
            data.classes(),
        ));
    }
    Ok(())
}

/// Number of correctly classified items.
pub fn correct_count(net: &DenseNetwork, data: &LabeledDataset) -> Result<usize> {
    check_dataset(net, data)?;
    const CHUNK: usize = 512;
    let labels = data.labels();
    Ok(data
        .inputs_flat()
        .par_chunks(CHUNK * data.dim().max(1))
        .enumerate()
        .map(|(c, block)| {
            let mut scratch = Scratch::new(net);
            block
                .chunks_exact(data.dim().max(1))
                .enumerate()
                .filter(|(i, x)| scratch.classify(net, x) == labels[c * CHUNK + i])
                .count()
        })
        .sum())
}

/// Clean classification accuracy in percent.
pub fn accuracy(net: &DenseNetwork, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    Ok(percent(correct_count(net, data)?, data.len()))
}

#[inline]
pub(crate) fn percent(correct: usize, total: usize) -> f64 {
    // One rounding step, so 2562 of 5000 is the double nearest 51.24.
    (correct as f64 * 100.0) / total as f64
}
