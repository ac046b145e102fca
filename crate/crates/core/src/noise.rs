//! Noisy forward passes.
//!
//! A target hidden layer `n` is perturbed with independent standard normals
//! `ξ^M`, `ξ^A` per neuron:
//!
//! * after the activation: `y = f(x̃) · (1 + sqrt(2 D_M) ξ^M) + sqrt(2 D_A) ξ^A`
//! * before the activation: `y = f(x̃ · (1 + sqrt(2 D_M) ξ^M) + sqrt(2 D_A) ξ^A)`
//!
//! where `x̃` is computed from the (possibly noisy) outputs of the previous
//! layer, so a perturbation propagates through every later layer.
//!
//! Draw order is fixed: layers ascending, neurons ascending, multiplicative
//! before additive. A draw is skipped when its intensity is zero, so a
//! zero-intensity spec consumes nothing and reproduces the clean pass
//! bit for bit.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mathcore::{derive_seed, mat_vec_into, GaussianSource};
use crate::network::{
    argmax, check_dataset, check_input, correct_count, percent, sigmoid_in_place, softmax_in_place, DenseNetwork,
    ForwardTrace, NetworkTopology,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseStage {
    Before,
    After,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Additive,
    Multiplicative,
    Both,
}

impl NoiseStage {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseStage::Before => "before",
            NoiseStage::After => "after",
        }
    }
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Additive => "additive",
            NoiseKind::Multiplicative => "multiplicative",
            NoiseKind::Both => "both",
        }
    }
}

impl fmt::Display for NoiseStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before" => Ok(NoiseStage::Before),
            "after" => Ok(NoiseStage::After),
            _ => Err(Error::InvalidValue(format!(
                "unknown stage {s:?} (expected before|after)"
            ))),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(NoiseKind::Additive),
            "multiplicative" => Ok(NoiseKind::Multiplicative),
            "both" => Ok(NoiseKind::Both),
            _ => Err(Error::InvalidValue(format!(
                "unknown noise kind {s:?} (expected additive|multiplicative|both)"
            ))),
        }
    }
}

/// Where and how strongly noise is injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `D_A`; the additive term has variance `2 D_A`.
    pub additive: f64,
    /// `D_M`; the multiplicative factor is `1 + sqrt(2 D_M) ξ`.
    pub multiplicative: f64,
    pub stage: NoiseStage,
    /// 1-based hidden layer numbers.
    pub layers: BTreeSet<usize>,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, intensity: f64, stage: NoiseStage, layers: impl IntoIterator<Item = usize>) -> Self {
        let (additive, multiplicative) = match kind {
            NoiseKind::Additive => (intensity, 0.0),
            NoiseKind::Multiplicative => (0.0, intensity),
            NoiseKind::Both => (intensity, intensity),
        };
        Self {
            additive,
            multiplicative,
            stage,
            layers: layers.into_iter().collect(),
        }
    }

    pub fn none() -> Self {
        Self {
            additive: 0.0,
            multiplicative: 0.0,
            stage: NoiseStage::After,
            layers: BTreeSet::new(),
        }
    }

    /// True when no draw would ever be taken.
    pub fn is_silent(&self) -> bool {
        (self.additive == 0.0 && self.multiplicative == 0.0) || self.layers.is_empty()
    }

    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        for (name, d) in [("additive", self.additive), ("multiplicative", self.multiplicative)] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Spec(format!(
                    "{name} intensity must be finite and >= 0, got {d}"
                )));
            }
        }
        if let Some(&bad) = self.layers.iter().find(|&&l| !topology.is_hidden(l)) {
            return Err(Error::Spec(format!(
                "layer {bad} is not a hidden layer of {topology} (hidden layers are 2..={})",
                topology.depth() - 1
            )));
        }
        Ok(())
    }

    fn amplitudes(&self) -> (f64, f64) {
        ((2.0 * self.multiplicative).sqrt(), (2.0 * self.additive).sqrt())
    }
}

/// Applies the per-neuron perturbation to `signal` in place.
#[inline]
fn perturb(signal: &mut [f64], mult_amp: f64, add_amp: f64, rng: &mut GaussianSource) {
    for s in signal.iter_mut() {
        if mult_amp > 0.0 {
            *s *= 1.0 + mult_amp * rng.sample();
        }
        if add_amp > 0.0 {
            *s += add_amp * rng.sample();
        }
    }
}

/// Computes layer `layer`'s output from the weighted input `pre` into
/// `act`, injecting noise when the layer is targeted.
#[inline]
fn activate(
    layer: usize,
    depth: usize,
    pre: &[f64],
    act: &mut Vec<f64>,
    spec: &NoiseSpec,
    amps: (f64, f64),
    rng: &mut GaussianSource,
) {
    act.clear();
    act.extend_from_slice(pre);
    if layer == depth {
        softmax_in_place(act);
        return;
    }
    let noisy = spec.layers.contains(&layer);
    match spec.stage {
        NoiseStage::Before if noisy => {
            perturb(act, amps.0, amps.1, rng);
            sigmoid_in_place(act);
        }
        NoiseStage::After if noisy => {
            sigmoid_in_place(act);
            perturb(act, amps.0, amps.1, rng);
        }
        _ => sigmoid_in_place(act),
    }
}

/// Forward pass with internal noise.
///
/// The trace records, per layer, the weighted input computed from the
/// previous layer's (noisy) output and the layer's final (noisy) output.
/// For before-activation noise the perturbed argument of `f` is not stored.
pub fn forward_noisy(
    net: &DenseNetwork,
    x: &[f64],
    spec: &NoiseSpec,
    rng: &mut GaussianSource,
) -> Result<ForwardTrace> {
    check_input(net, x)?;
    spec.validate(net.topology())?;
    let depth = net.topology().depth();
    let amps = spec.amplitudes();
    let mut activations = Vec::with_capacity(depth);
    let mut preactivations = Vec::with_capacity(depth - 1);
    activations.push(x.to_vec());
    for (k, w) in net.weights().iter().enumerate() {
        let mut pre = vec![0.0; w.cols()];
        mat_vec_into(w, &activations[k], &mut pre)?;
        let mut act = Vec::with_capacity(w.cols());
        activate(k + 2, depth, &pre, &mut act, spec, amps, rng);
        preactivations.push(pre);
        activations.push(act);
    }
    Ok(ForwardTrace {
        preactivations,
        activations,
    })
}

/// Mean and spread of accuracy across noise repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyAccuracy {
    /// Percent, pooled over all repetitions.
    pub mean: f64,
    /// Population standard deviation of the per-repetition accuracies.
    pub std: f64,
    pub per_repetition: Vec<f64>,
}

impl NoisyAccuracy {
    fn from_counts(counts: &[usize], items: usize) -> Self {
        let per_repetition: Vec<f64> = counts.iter().map(|&c| percent(c, items)).collect();
        let total: usize = counts.iter().sum();
        let mean = percent(total, items * counts.len());
        let var = per_repetition.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / counts.len() as f64;
        Self {
            mean,
            std: var.sqrt(),
            per_repetition,
        }
    }
}

/// Noise stream used by repetition `rep` under master seed `seed`.
pub fn repetition_source(seed: u64, rep: usize) -> GaussianSource {
    GaussianSource::new(derive_seed(seed, rep as u64))
}

/// Classifies the whole dataset `repetitions` times with fresh noise.
///
/// Repetition `r` draws from [`repetition_source`]`(seed, r)` and visits
/// items in dataset order, so each repetition equals running
/// [`forward_noisy`] over the dataset with that source. Layers before the
/// first noisy one are computed once per item and shared by all
/// repetitions.
pub fn evaluate_noisy(
    net: &DenseNetwork,
    data: &LabeledDataset,
    spec: &NoiseSpec,
    repetitions: usize,
    seed: u64,
) -> Result<NoisyAccuracy> {
    if repetitions < 1 {
        return Err(Error::InvalidValue("repetitions must be >= 1".into()));
    }
    check_dataset(net, data)?;
    spec.validate(net.topology())?;
    if data.is_empty() {
        return Err(Error::InvalidValue("cannot evaluate on an empty dataset".into()));
    }
    if spec.is_silent() {
        let c = correct_count(net, data)?;
        return Ok(NoisyAccuracy::from_counts(&vec![c; repetitions], data.len()));
    }

    let depth = net.topology().depth();
    let first = *spec.layers.first().expect("non-silent spec has layers");
    let amps = spec.amplitudes();
    let mut sources: Vec<GaussianSource> = (0..repetitions).map(|r| repetition_source(seed, r)).collect();
    let mut counts = vec![0usize; repetitions];
    let (mut prefix, mut pre, mut cur, mut next) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut silent_rng = GaussianSource::new(0);
    let clean = NoiseSpec::none();

    for (x, label) in data.iter() {
        // Clean layers 2..first-1.
        prefix.clear();
        prefix.extend_from_slice(x);
        for layer in 2..first {
            let w = net.matrix(layer);
            pre.clear();
            pre.resize(w.cols(), 0.0);
            mat_vec_into(w, &prefix, &mut pre)?;
            activate(layer, depth, &pre, &mut next, &clean, (0.0, 0.0), &mut silent_rng);
            std::mem::swap(&mut prefix, &mut next);
        }
        for (rng, count) in sources.iter_mut().zip(counts.iter_mut()) {
            cur.clear();
            cur.extend_from_slice(&prefix);
            for layer in first..=depth {
                let w = net.matrix(layer);
                pre.clear();
                pre.resize(w.cols(), 0.0);
                mat_vec_into(w, &cur, &mut pre)?;
                activate(layer, depth, &pre, &mut next, spec, amps, rng);
                std::mem::swap(&mut cur, &mut next);
            }
            if argmax(&cur) == label {
                *count += 1;
            }
        }
    }
    Ok(NoisyAccuracy::from_counts(&counts, data.len()))
}
