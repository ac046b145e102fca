use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuronoise_core::analysis::{format_stats_table, stats_csv, variance_amplification_estimate, weight_stats};
use neuronoise_core::dataset::{
    load_mnist, synthetic_dataset, LabeledDataset, Split, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use neuronoise_core::experiment::{self, layer_label, SweepConfig, SweepResult, SweepRow};
use neuronoise_core::noise::{evaluate_noisy, NoiseKind, NoiseSpec, NoiseStage};
use neuronoise_core::pooling::{apply_pooling, PoolSpec};
use neuronoise_core::training::{self, TrainConfig};
use neuronoise_core::{checkpoint, DenseNetwork, Error, NetworkTopology};

mod manifest;
mod reproduce;

/// Emits one `event=<name> key=value ...` line on stderr.
macro_rules! log_kv {
    ($event:expr $(, $key:literal = $val:expr)* $(,)?) => {
        eprintln!(concat!("event={}" $(, " ", $key, "={}")*), $event $(, $val)*)
    };
}
pub(crate) use log_kv;

#[derive(Parser)]
#[command(
    name = "neuronoise",
    version,
    about = "Internal-noise experiments on trained sigmoid networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network with Adam and categorical cross-entropy
    Train(TrainArgs),
    /// Test accuracy of a checkpoint under internal noise
    Eval(EvalArgs),
    /// Weight-matrix statistics: mu, mu^2, eta and N*eta per matrix
    Stats(StatsArgs),
    /// Replace hidden neurons by m averaged copies and save the result
    Pool(PoolArgs),
    /// Run a noise-intensity sweep described by a JSON file
    Sweep(SweepArgs),
    /// Train every reference topology and write all figure CSVs
    Reproduce(reproduce::ReproduceArgs),
}

#[derive(Args, Clone, Debug)]
pub(crate) struct DataArgs {
    /// Directory with the four MNIST IDX files (optionally gzipped)
    #[arg(long, env = "NEURONOISE_DATA_DIR", default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Use seeded Gaussian blobs instead of MNIST
    #[arg(long)]
    pub synthetic: bool,
    /// Seed of the synthetic dataset
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    /// Synthetic training samples
    #[arg(long, default_value_t = 2000)]
    pub synthetic_train: usize,
    /// Synthetic test samples
    #[arg(long, default_value_t = 500)]
    pub synthetic_test: usize,
}

impl DataArgs {
    pub fn load(&self, split: Split, dim: usize, classes: usize) -> Result<LabeledDataset, Failure> {
        if self.synthetic {
            let n = match split {
                Split::Train => self.synthetic_train,
                Split::Test => self.synthetic_test,
            };
            return Ok(synthetic_dataset(self.data_seed, n, dim, classes, split)?);
        }
        load_mnist(&self.data_dir, split).map_err(|e| match e {
            Error::MissingData { .. } => Failure::Data(format!(
                "{e}. Point --data-dir or NEURONOISE_DATA_DIR at a directory containing {TRAIN_IMAGES}, \
                 {TRAIN_LABELS}, {TEST_IMAGES} and {TEST_LABELS}, or pass --synthetic"
            )),
            e => Failure::Core(e),
        })
    }

    pub fn describe(&self) -> String {
        if self.synthetic {
            format!(
                "synthetic(seed={},train={},test={})",
                self.data_seed, self.synthetic_train, self.synthetic_test
            )
        } else {
            self.data_dir.display().to_string()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Layer sizes including input and output, e.g. 784,20,10
    #[arg(long)]
    topology: NetworkTopology,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Seeds both weight initialisation and minibatch shuffling
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "additive")]
    noise_kind: NoiseKind,
    #[arg(long, default_value = "after")]
    stage: NoiseStage,
    /// Hidden layers that receive noise, e.g. 2,3
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Noise intensity (half the variance of the injected term)
    #[arg(long = "D", default_value_t = 0.0)]
    d: f64,
    /// Independent noise repetitions over the test set
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Also write the statistics as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    model: PathBuf,
    /// Copies per neuron
    #[arg(long)]
    m: usize,
    /// Hidden layers to pool, e.g. 2,3,4 (default: all hidden layers)
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep description
    #[arg(long)]
    config: PathBuf,
    /// Result CSV
    #[arg(long)]
    out: PathBuf,
    /// Maximum parallel sweep cells; results do not depend on it
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug)]
pub(crate) enum Failure {
    Usage(String),
    Data(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Core(e) if e.is_data_error() => 2,
            Failure::Core(e) if e.is_numeric_error() => 3,
            Failure::Core(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

/// Fails early when an output cannot be created, before any work is done.
pub(crate) fn check_writable(path: &Path) -> Result<(), Failure> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Failure::Usage(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
        Command::Pool(a) => pool(a),
        Command::Sweep(a) => sweep(a),
        Command::Reproduce(a) => reproduce::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log_kv!(
                "error",
                "code" = f.exit_code(),
                "message" = format!("{:?}", f.message())
            );
            ExitCode::from(f.exit_code())
        }
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        ..TrainConfig::with_seed(a.seed)
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    check_writable(&a.out)?;
    let (net, report) = train_topology(&a.topology, &a.data, &config)?;
    checkpoint::save(&net, &a.out)?;
    log_kv!("saved", "path" = a.out.display());
    println!("topology,epochs,batch,lr,seed,final_loss,train_accuracy,test_accuracy");
    println!(
        "{},{},{},{},{},{},{},{}",
        a.topology.id(),
        a.epochs,
        a.batch,
        a.lr,
        a.seed,
        report.final_loss(),
        report.train_accuracy,
        report.test_accuracy
    );
    Ok(())
}

pub(crate) fn train_topology(
    topology: &NetworkTopology,
    data: &DataArgs,
    config: &TrainConfig,
) -> Result<(DenseNetwork, training::TrainReport), Failure> {
    let train_set = data.load(Split::Train, topology.input_dim(), topology.classes())?;
    let test_set = data.load(Split::Test, topology.input_dim(), topology.classes())?;
    let id = topology.id();
    log_kv!(
        "train_start",
        "topology" = id,
        "epochs" = config.epochs,
        "batch" = config.batch_size,
        "lr" = config.learning_rate,
        "train_samples" = train_set.len(),
        "data" = data.describe()
    );
    let mut net = training::init_weights(topology, config.init_seed);
    let report = training::train_with_progress(&mut net, &train_set, &test_set, config, |e| {
        log_kv!("epoch", "topology" = id, "epoch" = e.epoch + 1, "loss" = e.mean_loss);
    })?;
    log_kv!(
        "train_done",
        "topology" = id,
        "train_accuracy" = report.train_accuracy,
        "test_accuracy" = report.test_accuracy
    );
    Ok((net, report))
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    if !(a.d.is_finite() && a.d >= 0.0) {
        return Err(Failure::Usage(format!("--D must be finite and >= 0, got {}", a.d)));
    }
    if a.reps < 1 {
        return Err(Failure::Usage("--reps must be >= 1".into()));
    }
    if a.d > 0.0 && a.layers.is_empty() {
        return Err(Failure::Usage("--layers is required when --D > 0".into()));
    }
    let net = checkpoint::load(&a.model)?;
    let topo = net.topology();
    let spec = NoiseSpec::new(a.noise_kind, a.d, a.stage, a.layers.iter().copied());
    spec.validate(topo).map_err(|e| Failure::Usage(e.to_string()))?;
    let data = a.data.load(Split::Test, topo.input_dim(), topo.classes())?;
    let acc = evaluate_noisy(&net, &data, &spec, a.reps, a.seed)?;
    log_kv!(
        "eval",
        "model" = a.model.display(),
        "samples" = data.len(),
        "acc_mean" = acc.mean,
        "acc_std" = acc.std
    );
    let row = SweepRow {
        topology: topo.id(),
        stage: a.stage,
        kind: a.noise_kind,
        layer: layer_label(&spec.layers),
        d: a.d,
        acc_mean: acc.mean,
        acc_std: acc.std,
        reps: a.reps,
        seed: a.seed,
    };
    print!("{}", experiment::to_csv_string(&SweepResult { rows: vec![row] }));
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    if let Some(p) = &a.csv {
        check_writable(p)?;
    }
    let net = checkpoint::load(&a.model)?;
    let stats = weight_stats(&net);
    print!("{}", format_stats_table(&stats));
    for layer in net.topology().hidden_layers() {
        log_kv!(
            "amplification",
            "noisy_layer" = layer,
            "estimate" = variance_amplification_estimate(&net, layer)?
        );
    }
    if let Some(p) = &a.csv {
        fs::write(p, stats_csv(&stats)).map_err(|e| Error::io(p, e))?;
        log_kv!("saved", "path" = p.display());
    }
    Ok(())
}

fn pool(a: PoolArgs) -> Result<(), Failure> {
    check_writable(&a.out)?;
    let net = checkpoint::load(&a.model)?;
    let spec = if a.layers.is_empty() {
        PoolSpec::all_hidden(a.m, net.topology())
    } else {
        PoolSpec::new(a.m, a.layers.iter().copied())
    };
    spec.validate(net.topology())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let pooled = apply_pooling(&net, &spec)?;
    checkpoint::save(&pooled, &a.out)?;
    log_kv!(
        "pooled",
        "from" = net.topology().id(),
        "to" = pooled.topology().id(),
        "m" = a.m,
        "path" = a.out.display()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let config = SweepConfig::load(&a.config)?;
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if config.models.is_empty() {
        return Err(Failure::Usage("sweep config lists no models".into()));
    }
    if a.workers < 1 {
        return Err(Failure::Usage("--workers must be >= 1".into()));
    }
    check_writable(&a.out)?;
    let models = experiment::load_models(&config)?;
    let first = models[0].net.topology();
    let (dim, classes) = (first.input_dim(), first.classes());
    if let Some(m) = models.iter().find(|m| m.net.topology().input_dim() != dim) {
        return Err(Failure::Usage(format!(
            "model {} expects {} inputs, {} expects {dim}",
            m.id,
            m.net.topology().input_dim(),
            models[0].id
        )));
    }
    let data = a.data.load(Split::Test, dim, classes)?;
    log_kv!(
        "sweep_start",
        "models" = models.len(),
        "workers" = a.workers,
        "seed" = config.seed
    );
    let result = experiment::run_sweep(&config, &models, &data, a.workers)?;
    experiment::emit_csv(&result, &a.out)?;
    log_kv!("sweep_done", "rows" = result.rows.len(), "path" = a.out.display());
    Ok(())
}
