//! Minibatch backpropagation with Adam and categorical cross-entropy.
//!
//! Training is always noise-free; noise only enters at inference.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mathcore::{gemm, Matrix, View};
use crate::network::{self, check_dataset, sigmoid_scalar, DenseNetwork, NetworkTopology};

/// Probabilities are shifted by this before the logarithm.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 42,
            init_seed: 42,
        }
    }
}

impl TrainConfig {
    /// Default hyperparameters with both seeds derived from one value.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            shuffle_seed: crate::mathcore::derive_seed(seed, 1),
            init_seed: crate::mathcore::derive_seed(seed, 0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidValue(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("Adam epsilon must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Glorot-uniform initialisation: entries of `W^n` uniform in
/// `±sqrt(6 / (N_{n-1} + N_n))`.
pub fn init_weights(topology: &NetworkTopology, seed: u64) -> DenseNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = topology
        .sizes()
        .windows(2)
        .map(|p| {
            let limit = (6.0 / (p[0] + p[1]) as f64).sqrt();
            let data = (0..p[0] * p[1]).map(|_| rng.random_range(-limit..limit)).collect();
            Matrix::new(p[0], p[1], data).expect("finite by construction")
        })
        .collect();
    DenseNetwork::new(topology.clone(), weights).expect("shapes follow topology")
}

/// Reusable per-batch buffers for forward and backward passes.
struct Backprop {
    /// Activations of layers 2..=L, each `batch x N_n`.
    acts: Vec<Vec<f64>>,
    /// Error signal for the layer being processed and the one below it.
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Backprop {
    fn new() -> Self {
        Self {
            acts: Vec::new(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    /// Forward pass over a batch; fills `self.acts`.
    fn forward(&mut self, net: &DenseNetwork, inputs: &[f64], batch: usize) {
        let sizes = net.topology().sizes();
        let depth = sizes.len();
        self.acts.resize_with(depth - 1, Vec::new);
        for (k, w) in net.weights().iter().enumerate() {
            let (done, rest) = self.acts.split_at_mut(k);
            let prev: &[f64] = if k == 0 { inputs } else { &done[k - 1] };
            let out = &mut rest[0];
            out.clear();
            out.resize(batch * w.cols(), 0.0);
            gemm(
                View::row_major(prev, batch, sizes[k]),
                View::row_major(w.as_slice(), w.rows(), w.cols()),
                0.0,
                out,
            );
            if k + 2 == depth {
                out.chunks_exact_mut(w.cols()).for_each(network::softmax_in_place);
            } else {
                out.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
            }
        }
    }

    /// Backward pass after `forward`; writes gradients into `grads` and
    /// returns the mean clipped cross-entropy.
    fn backward(&mut self, net: &DenseNetwork, inputs: &[f64], labels: &[usize], grads: &mut [Matrix]) -> f64 {
        let sizes = net.topology().sizes();
        let depth = sizes.len();
        let batch = labels.len();
        let classes = sizes[depth - 1];
        let inv_b = 1.0 / batch as f64;

        let probs = &self.acts[depth - 2];
        let mut loss = 0.0;
        self.delta.clear();
        self.delta.extend_from_slice(probs);
        for (b, &label) in labels.iter().enumerate() {
            let row = &mut self.delta[b * classes..(b + 1) * classes];
            let p_true = row[label];
            loss -= (p_true + PROB_CLIP).ln();
            // d/dz_k of -ln(p_t + c) = p_t / (p_t + c) * (p_k - [k == t]).
            let scale = p_true / (p_true + PROB_CLIP) * inv_b;
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }

        for k in (0..depth - 1).rev() {
            let below: &[f64] = if k == 0 { inputs } else { &self.acts[k - 1] };
            let (n_in, n_out) = (sizes[k], sizes[k + 1]);
            gemm(
                View::row_major(below, batch, n_in).t(),
                View::row_major(&self.delta, batch, n_out),
                0.0,
                grads[k].as_mut_slice(),
            );
            if k == 0 {
                break;
            }
            let w = &net.weights()[k];
            self.delta_prev.clear();
            self.delta_prev.resize(batch * n_in, 0.0);
            gemm(
                View::row_major(&self.delta, batch, n_out),
                View::row_major(w.as_slice(), n_in, n_out).t(),
                0.0,
                &mut self.delta_prev,
            );
            for (d, &a) in self.delta_prev.iter_mut().zip(below) {
                *d *= a * (1.0 - a);
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
        loss * inv_b
    }
}

fn zero_grads(net: &DenseNetwork) -> Vec<Matrix> {
    net.weights()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect()
}

fn check_batch(net: &DenseNetwork, inputs: &[f64], labels: &[usize]) -> Result<()> {
    let topo = net.topology();
    if labels.is_empty() {
        return Err(Error::InvalidValue("empty batch".into()));
    }
    if inputs.len() != labels.len() * topo.input_dim() {
        return Err(Error::shape(
            "batch inputs vs batch size x input dim",
            labels.len() * topo.input_dim(),
            inputs.len(),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= topo.classes()) {
        return Err(Error::InvalidValue(format!("label {l} outside 0..{}", topo.classes())));
    }
    Ok(())
}

/// Mean clipped cross-entropy of a batch and its gradient with respect to
/// every weight matrix.
///
/// `inputs` holds the batch row-major (`batch x N_1`); `labels` are class
/// indices, one-hot encoded implicitly.
pub fn loss_and_gradients(net: &DenseNetwork, inputs: &[f64], labels: &[usize]) -> Result<(f64, Vec<Matrix>)> {
    check_batch(net, inputs, labels)?;
    let mut bp = Backprop::new();
    let mut grads = zero_grads(net);
    bp.forward(net, inputs, labels.len());
    let loss = bp.backward(net, inputs, labels, &mut grads);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            quantity: "loss",
            batch: None,
        });
    }
    Ok((loss, grads))
}

/// Mean clipped cross-entropy only.
pub fn loss(net: &DenseNetwork, inputs: &[f64], labels: &[usize]) -> Result<f64> {
    check_batch(net, inputs, labels)?;
    let mut bp = Backprop::new();
    bp.forward(net, inputs, labels.len());
    let classes = net.topology().classes();
    let probs = bp.acts.last().expect("at least one matrix");
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -(probs[b * classes + l] + PROB_CLIP).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNetwork) -> Self {
        Self {
            m: zero_grads(net),
            v: zero_grads(net),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update on a flat parameter block. `step` is the
/// 1-based index of this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let c1 = 1.0 - beta1.powf(step as f64);
    let c2 = 1.0 - beta2.powf(step as f64);
    for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
}

pub fn adam_step(net: &mut DenseNetwork, grads: &[Matrix], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.len() != net.weights().len() || state.m.len() != grads.len() || state.v.len() != grads.len() {
        return Err(Error::shape(
            "Adam gradient/moment matrix count",
            net.weights().len(),
            grads.len(),
        ));
    }
    for ((w, g), (m, v)) in net.weights().iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        for other in [g, m, v] {
            if other.len() != w.len() {
                return Err(Error::shape("Adam gradient/moment size", w.len(), other.len()));
            }
        }
    }
    state.step += 1;
    for ((w, g), (m, v)) in net
        .weights_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        adam_update(
            w.as_mut_slice(),
            g.as_slice(),
            m.as_mut_slice(),
            v.as_mut_slice(),
            state.step,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
        );
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
}

pub fn train(
    net: &mut DenseNetwork,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(net, train_set, test_set, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    net: &mut DenseNetwork,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(EpochSummary),
) -> Result<TrainReport> {
    config.validate()?;
    check_dataset(net, train_set)?;
    check_dataset(net, test_set)?;
    if train_set.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()));
    }

    let dim = train_set.dim();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut state = AdamState::new(net);
    let mut grads = zero_grads(net);
    let mut bp = Backprop::new();
    let mut batch_inputs = Vec::with_capacity(config.batch_size * dim);
    let mut batch_labels = Vec::with_capacity(config.batch_size);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_index = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch_inputs.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_inputs.extend_from_slice(train_set.input(i));
                batch_labels.push(train_set.label(i));
            }
            bp.forward(net, &batch_inputs, chunk.len());
            let loss = bp.backward(net, &batch_inputs, &batch_labels, &mut grads);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "loss",
                    batch: Some(batch_index),
                });
            }
            total += loss * chunk.len() as f64;
            adam_step(net, &grads, &mut state, config)?;
            batch_index += 1;
        }
        let mean_loss = total / train_set.len() as f64;
        epoch_losses.push(mean_loss);
        on_epoch(EpochSummary { epoch, mean_loss });
    }

    Ok(TrainReport {
        epoch_losses,
        train_accuracy: network::accuracy(net, train_set)?,
        test_accuracy: if test_set.is_empty() {
            0.0
        } else {
            network::accuracy(net, test_set)?
        },
    })
}
