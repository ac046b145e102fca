//! Noise-intensity sweeps, their CSV form, and curve-ordering checks.
//!
//! A sweep evaluates the Cartesian grid
//! `models x stages x kinds x layer selections x ({0} ∪ D grid)`. Cells are
//! independent: cell `i` draws noise from `derive_seed(master, i)`, so the
//! result does not depend on how many workers run the grid.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::mathcore::derive_seed;
use crate::network::DenseNetwork;
use crate::noise::{evaluate_noisy, NoiseKind, NoiseSpec, NoiseStage};
use crate::pooling::{apply_pooling, PoolSpec};

pub const CSV_HEADER: [&str; 9] = [
    "topology", "stage", "kind", "layer", "D", "acc_mean", "acc_std", "reps", "seed",
];

/// 21 log-spaced intensities over `[1e-4, 1]`, five per decade.
pub fn default_d_grid() -> Vec<f64> {
    // 10^(k/5), k = 0..4
    const STEPS: [f64; 5] = [
        1.0,
        1.584_893_192_461_113_6,
        2.511_886_431_509_58,
        3.981_071_705_534_972,
        6.309_573_444_801_933,
    ];
    let mut grid = Vec::with_capacity(21);
    for decade in [1e-4, 1e-3, 1e-2, 1e-1] {
        grid.extend(STEPS.iter().map(|s| s * decade));
    }
    grid.push(1.0);
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    /// Label for the `topology` column; defaults to the dash-joined sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub path: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolScope {
    /// Pool exactly the layers that receive noise.
    Noisy,
    /// Pool every hidden layer.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub m: usize,
    #[serde(default = "default_scope")]
    pub scope: PoolScope,
}

fn default_scope() -> PoolScope {
    PoolScope::Noisy
}

fn default_reps() -> usize {
    10
}

fn default_kinds() -> Vec<NoiseKind> {
    vec![NoiseKind::Additive, NoiseKind::Multiplicative]
}

fn default_stages() -> Vec<NoiseStage> {
    vec![NoiseStage::After]
}

/// JSON-encoded sweep description. Only `models` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub models: Vec<ModelRef>,
    #[serde(default = "default_d_grid")]
    pub d_grid: Vec<f64>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<NoiseKind>,
    #[serde(default = "default_stages")]
    pub stages: Vec<NoiseStage>,
    /// Layer selections, each a set of hidden layers noised together.
    /// Empty means every hidden layer on its own.
    #[serde(default)]
    pub layers: Vec<Vec<usize>>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pooling: Option<PoolingConfig>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            d_grid: default_d_grid(),
            kinds: default_kinds(),
            stages: default_stages(),
            layers: Vec::new(),
            repetitions: default_reps(),
            seed: 0,
            pooling: None,
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidValue(format!("sweep config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidValue(m));
        if self.d_grid.is_empty() {
            return bad("D grid is empty".into());
        }
        if self.d_grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("D grid values must be finite and >= 0".into());
        }
        if self.d_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("D grid must be strictly increasing".into());
        }
        if self.repetitions < 1 {
            return bad("repetitions must be >= 1".into());
        }
        if self.kinds.is_empty() || self.stages.is_empty() {
            return bad("kinds and stages must be non-empty".into());
        }
        if self.layers.iter().any(Vec::is_empty) {
            return bad("layer selections must be non-empty".into());
        }
        if let Some(p) = &self.pooling {
            if p.m < 1 {
                return bad("pooling m must be >= 1".into());
            }
        }
        Ok(())
    }

    /// Intensities evaluated per curve: `0` followed by the grid.
    pub fn intensities(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d_grid.len() + 1);
        if self.d_grid.first() != Some(&0.0) {
            out.push(0.0);
        }
        out.extend_from_slice(&self.d_grid);
        out
    }
}

/// A trained network with the label used in result rows.
#[derive(Clone, Debug)]
pub struct SweepModel {
    pub id: String,
    pub net: DenseNetwork,
}

impl SweepModel {
    pub fn new(net: DenseNetwork) -> Self {
        Self {
            id: net.topology().id(),
            net,
        }
    }

    pub fn with_id(id: impl Into<String>, net: DenseNetwork) -> Self {
        Self { id: id.into(), net }
    }
}

pub fn load_models(config: &SweepConfig) -> Result<Vec<SweepModel>> {
    config
        .models
        .iter()
        .map(|m| {
            let net = checkpoint::load(&m.path)?;
            Ok(match &m.id {
                Some(id) => SweepModel::with_id(id.clone(), net),
                None => SweepModel::new(net),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub topology: String,
    pub stage: NoiseStage,
    pub kind: NoiseKind,
    /// Noisy layers joined by `+`, e.g. `2` or `2+3`.
    pub layer: String,
    #[serde(rename = "D")]
    pub d: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub fn layer_label(layers: &BTreeSet<usize>) -> String {
    layers.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

pub fn parse_layer_label(s: &str) -> Result<BTreeSet<usize>> {
    s.split('+')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidValue(format!("bad layer label {s:?}")))
        })
        .collect()
}

struct Cell<'a> {
    model: &'a SweepModel,
    stage: NoiseStage,
    kind: NoiseKind,
    layers: BTreeSet<usize>,
    d: f64,
    seed: u64,
}

impl Cell<'_> {
    fn coordinates(&self) -> String {
        format!(
            "topology={} stage={} kind={} layer={} D={}",
            self.model.id,
            self.stage,
            self.kind,
            layer_label(&self.layers),
            self.d
        )
    }
}

/// Topology label for pooled rows, e.g. `784-20-20-20-10+pool3`.
pub fn pooled_label(id: &str, pooling: &PoolingConfig) -> String {
    match pooling.scope {
        PoolScope::Noisy => format!("{id}+pool{}", pooling.m),
        PoolScope::All => format!("{id}+poolall{}", pooling.m),
    }
}

fn run_cell(cell: &Cell<'_>, data: &LabeledDataset, config: &SweepConfig) -> Result<SweepRow> {
    let mut net_storage = None;
    let mut topology = cell.model.id.clone();
    if let Some(p) = &config.pooling {
        let spec = match p.scope {
            PoolScope::Noisy => PoolSpec::new(p.m, cell.layers.iter().copied()),
            PoolScope::All => PoolSpec::all_hidden(p.m, cell.model.net.topology()),
        };
        net_storage = Some(apply_pooling(&cell.model.net, &spec)?);
        topology = pooled_label(&cell.model.id, p);
    }
    let net = net_storage.as_ref().unwrap_or(&cell.model.net);
    let spec = NoiseSpec::new(cell.kind, cell.d, cell.stage, cell.layers.iter().copied());
    let acc = evaluate_noisy(net, data, &spec, config.repetitions, cell.seed)?;
    Ok(SweepRow {
        topology,
        stage: cell.stage,
        kind: cell.kind,
        layer: layer_label(&cell.layers),
        d: cell.d,
        acc_mean: acc.mean,
        acc_std: acc.std,
        reps: config.repetitions,
        seed: cell.seed,
    })
}

/// Evaluates every grid cell on `data` using at most `workers` threads.
pub fn run_sweep(
    config: &SweepConfig,
    models: &[SweepModel],
    data: &LabeledDataset,
    workers: usize,
) -> Result<SweepResult> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidValue("sweep has no models".into()));
    }
    let intensities = config.intensities();
    let mut cells = Vec::new();
    for model in models {
        let selections: Vec<BTreeSet<usize>> = if config.layers.is_empty() {
            model
                .net
                .topology()
                .hidden_layers()
                .map(|l| BTreeSet::from([l]))
                .collect()
        } else {
            config.layers.iter().map(|s| s.iter().copied().collect()).collect()
        };
        for &stage in &config.stages {
            for &kind in &config.kinds {
                for layers in &selections {
                    for &d in &intensities {
                        let seed = derive_seed(config.seed, cells.len() as u64);
                        cells.push(Cell {
                            model,
                            stage,
                            kind,
                            layers: layers.clone(),
                            d,
                            seed,
                        });
                    }
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidValue(format!("cannot start {workers} workers: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                run_cell(cell, data, config).map_err(|e| Error::Cell {
                    cell: cell.coordinates(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepResult { rows })
}

/// Loads the models named in `config` and runs the sweep.
pub fn run_sweep_from_config(config: &SweepConfig, data: &LabeledDataset, workers: usize) -> Result<SweepResult> {
    config.validate()?;
    let models = load_models(config)?;
    run_sweep(config, &models, data, workers)
}

pub fn write_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in &result.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<SweepResult> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected sweep CSV header {header:?}")));
    }
    let rows = r.deserialize().collect::<Result<Vec<SweepRow>, _>>()?;
    Ok(SweepResult { rows })
}

pub fn to_csv_string(result: &SweepResult) -> String {
    let mut buf = Vec::new();
    write_csv(result, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

pub fn emit_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(result, std::io::BufWriter::new(file))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SweepResult> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Picks one curve out of a sweep result. `None` fields match anything.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveSelector {
    pub name: String,
    pub topology: Option<String>,
    pub stage: Option<NoiseStage>,
    pub kind: Option<NoiseKind>,
    pub layer: Option<String>,
}

impl CurveSelector {
    fn matches(&self, row: &SweepRow) -> bool {
        self.topology.as_ref().is_none_or(|t| *t == row.topology)
            && self.stage.is_none_or(|s| s == row.stage)
            && self.kind.is_none_or(|k| k == row.kind)
            && self.layer.as_ref().is_none_or(|l| *l == row.layer)
    }
}

/// Two curves and the claim that `expected_winner` lies above `other`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub expected_winner: CurveSelector,
    pub other: CurveSelector,
}

impl Grouping {
    /// Noise before the activation vs after it.
    pub fn stage_dominance(topology: &str, kind: NoiseKind, layer: &str) -> Self {
        let base = CurveSelector {
            topology: Some(topology.into()),
            kind: Some(kind),
            layer: Some(layer.into()),
            ..Default::default()
        };
        Self {
            expected_winner: CurveSelector {
                name: "before".into(),
                stage: Some(NoiseStage::Before),
                ..base.clone()
            },
            other: CurveSelector {
                name: "after".into(),
                stage: Some(NoiseStage::After),
                ..base
            },
        }
    }

    /// Multiplicative vs additive noise, after the activation.
    pub fn kind_ordering(topology: &str, layer: &str) -> Self {
        let base = CurveSelector {
            topology: Some(topology.into()),
            stage: Some(NoiseStage::After),
            layer: Some(layer.into()),
            ..Default::default()
        };
        Self {
            expected_winner: CurveSelector {
                name: "multiplicative".into(),
                kind: Some(NoiseKind::Multiplicative),
                ..base.clone()
            },
            other: CurveSelector {
                name: "additive".into(),
                kind: Some(NoiseKind::Additive),
                ..base
            },
        }
    }

    /// Noise in a later layer vs an earlier one.
    pub fn layer_ordering(topology: &str, stage: NoiseStage, kind: NoiseKind, later: usize, earlier: usize) -> Self {
        let base = CurveSelector {
            topology: Some(topology.into()),
            stage: Some(stage),
            kind: Some(kind),
            ..Default::default()
        };
        Self {
            expected_winner: CurveSelector {
                name: format!("layer {later}"),
                layer: Some(later.to_string()),
                ..base.clone()
            },
            other: CurveSelector {
                name: format!("layer {earlier}"),
                layer: Some(earlier.to_string()),
                ..base
            },
        }
    }

    /// Pooled rows (topology label `pooled`) vs plain rows.
    pub fn pooling(topology: &str, pooled: &str, stage: NoiseStage, kind: NoiseKind, layer: &str) -> Self {
        let base = CurveSelector {
            stage: Some(stage),
            kind: Some(kind),
            layer: Some(layer.into()),
            ..Default::default()
        };
        Self {
            expected_winner: CurveSelector {
                name: "pooled".into(),
                topology: Some(pooled.into()),
                ..base.clone()
            },
            other: CurveSelector {
                name: "unpooled".into(),
                topology: Some(topology.into()),
                ..base
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// The expected winner is ahead by more than the repetition spread.
    Dominates,
    /// The curves are within the repetition spread of each other.
    Tie,
    /// The expected winner is behind by more than the repetition spread.
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPoint {
    pub d: f64,
    pub winner_mean: f64,
    pub other_mean: f64,
    /// `winner_mean - other_mean`, percentage points.
    pub difference: f64,
    /// Larger of the two repetition standard deviations.
    pub tolerance: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub winner: String,
    pub other: String,
    pub points: Vec<ComparisonPoint>,
    pub verdict: Verdict,
}

impl OrderingReport {
    pub fn point(&self, d: f64) -> Option<&ComparisonPoint> {
        self.points.iter().find(|p| p.d == d)
    }
}

impl fmt::Display for OrderingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verdict {
            Verdict::Dominates => write!(f, "{} dominates", self.winner),
            Verdict::Tie => write!(f, "tie"),
            Verdict::Violated => write!(f, "{} does not dominate {}", self.winner, self.other),
        }
    }
}

fn curve<'a>(result: &'a SweepResult, sel: &CurveSelector) -> Result<Vec<&'a SweepRow>> {
    let mut rows: Vec<&SweepRow> = result.rows.iter().filter(|r| sel.matches(r)).collect();
    if rows.is_empty() {
        return Err(Error::Grouping(format!("no rows match curve {:?}", sel.name)));
    }
    rows.sort_by(|a, b| a.d.total_cmp(&b.d));
    if rows.windows(2).any(|w| w[0].d == w[1].d) {
        return Err(Error::Grouping(format!(
            "curve {:?} is ambiguous: several rows share one D value",
            sel.name
        )));
    }
    Ok(rows)
}

/// Per-D comparison of two curves with matched intensity grids.
pub fn compare_curves(result: &SweepResult, grouping: &Grouping) -> Result<OrderingReport> {
    let winner = curve(result, &grouping.expected_winner)?;
    let other = curve(result, &grouping.other)?;
    let same_grid = winner.len() == other.len() && winner.iter().zip(&other).all(|(a, b)| a.d == b.d);
    if !same_grid {
        return Err(Error::Grouping(format!(
            "curves {:?} and {:?} were evaluated at different D values",
            grouping.expected_winner.name, grouping.other.name
        )));
    }
    let points: Vec<ComparisonPoint> = winner
        .iter()
        .zip(&other)
        .map(|(a, b)| {
            let difference = a.acc_mean - b.acc_mean;
            let tolerance = a.acc_std.max(b.acc_std);
            let verdict = if difference > tolerance {
                Verdict::Dominates
            } else if difference < -tolerance {
                Verdict::Violated
            } else {
                Verdict::Tie
            };
            ComparisonPoint {
                d: a.d,
                winner_mean: a.acc_mean,
                other_mean: b.acc_mean,
                difference,
                tolerance,
                verdict,
            }
        })
        .collect();
    let verdict = if points.iter().any(|p| p.verdict == Verdict::Violated) {
        Verdict::Violated
    } else if points.iter().any(|p| p.verdict == Verdict::Dominates) {
        Verdict::Dominates
    } else {
        Verdict::Tie
    };
    Ok(OrderingReport {
        winner: grouping.expected_winner.name.clone(),
        other: grouping.other.name.clone(),
        points,
        verdict,
    })
}
