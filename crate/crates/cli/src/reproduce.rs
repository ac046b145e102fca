//! The full experiment suite: train the reference topologies, then run one
//! sweep per figure and write it as CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use neuronoise_core::analysis::weight_stats;
use neuronoise_core::checkpoint;
use neuronoise_core::dataset::Split;
use neuronoise_core::experiment::{
    self, default_d_grid, PoolScope, PoolingConfig, SweepConfig, SweepModel, SweepResult,
};
use neuronoise_core::mathcore::derive_seed;
use neuronoise_core::noise::{NoiseKind, NoiseStage};
use neuronoise_core::training::TrainConfig;
use neuronoise_core::{Error, NetworkTopology};

use crate::manifest::{ModelSummary, RunManifest, Status};
use crate::{log_kv, train_topology, DataArgs, Failure};

/// Hidden layer sizes of the reference MNIST networks.
const REFERENCE_HIDDEN: [&[usize]; 6] = [
    &[20],
    &[20, 20],
    &[20, 20, 20],
    &[10, 10, 10],
    &[30, 30, 30],
    &[350, 250, 200],
];

#[derive(Args)]
pub struct ReproduceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for checkpoints, figure CSVs and manifest.json
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Replace the reference networks, e.g. `--topologies 4,3,2 4,5,5,2`
    #[arg(long, num_args = 1..)]
    topologies: Vec<NetworkTopology>,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Noise repetitions per sweep cell
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Pool size for the pooling figures
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Maximum parallel sweep cells; results do not depend on it
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

/// Which trained networks a figure uses, as indices into the model list.
#[derive(Clone, Copy)]
enum Models {
    OneHidden,
    Shallow,
    Deep,
    Width,
}

struct Figure {
    name: &'static str,
    models: Models,
    stages: &'static [NoiseStage],
    pooled: bool,
}

const FIGURES: [Figure; 8] = [
    Figure {
        name: "after_depth_1_2",
        models: Models::Shallow,
        stages: &[NoiseStage::After],
        pooled: false,
    },
    Figure {
        name: "after_depth_3",
        models: Models::Deep,
        stages: &[NoiseStage::After],
        pooled: false,
    },
    Figure {
        name: "after_width",
        models: Models::Width,
        stages: &[NoiseStage::After],
        pooled: false,
    },
    Figure {
        name: "after_pooling",
        models: Models::Deep,
        stages: &[NoiseStage::After],
        pooled: true,
    },
    Figure {
        name: "before_vs_after_depth_1",
        models: Models::OneHidden,
        stages: &[NoiseStage::Before, NoiseStage::After],
        pooled: false,
    },
    Figure {
        name: "before_vs_after_depth_3",
        models: Models::Deep,
        stages: &[NoiseStage::Before, NoiseStage::After],
        pooled: false,
    },
    Figure {
        name: "before_vs_after_width",
        models: Models::Width,
        stages: &[NoiseStage::Before, NoiseStage::After],
        pooled: false,
    },
    Figure {
        name: "before_pooling",
        models: Models::Deep,
        stages: &[NoiseStage::Before],
        pooled: true,
    },
];

impl Models {
    fn indices(self, custom: bool, count: usize) -> Vec<usize> {
        if custom {
            return (0..count).collect();
        }
        match self {
            Models::OneHidden => vec![0],
            Models::Shallow => vec![0, 1],
            Models::Deep => vec![2],
            Models::Width => vec![3, 4, 5],
        }
    }
}

/// Everything that determines the output bytes; hashed into the manifest.
#[derive(Serialize)]
struct RunConfig<'a> {
    data: String,
    seed: u64,
    topologies: Vec<String>,
    epochs: usize,
    batch: usize,
    lr: f64,
    reps: usize,
    m: usize,
    d_grid: &'a [f64],
    figures: Vec<&'static str>,
}

pub fn run(a: ReproduceArgs) -> Result<(), Failure> {
    let custom = !a.topologies.is_empty();
    let topologies: Vec<NetworkTopology> = if custom {
        a.topologies.clone()
    } else {
        REFERENCE_HIDDEN
            .iter()
            .map(|h| NetworkTopology::mnist(h))
            .collect::<Result<_, _>>()?
    };
    let train_config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        ..TrainConfig::with_seed(a.seed)
    };
    train_config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.reps < 1 || a.m < 1 || a.workers < 1 {
        return Err(Failure::Usage("--reps, --m and --workers must be >= 1".into()));
    }
    let dim = topologies[0].input_dim();
    if let Some(t) = topologies
        .iter()
        .find(|t| t.input_dim() != dim || t.classes() != topologies[0].classes())
    {
        return Err(Failure::Usage(format!(
            "topology {t} does not share input and output sizes with {}",
            topologies[0]
        )));
    }
    // Loading up front surfaces missing data before anything is written.
    a.data.load(Split::Test, dim, topologies[0].classes())?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let d_grid = default_d_grid();
    let run_config = RunConfig {
        data: a.data.describe(),
        seed: a.seed,
        topologies: topologies.iter().map(NetworkTopology::id).collect(),
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        reps: a.reps,
        m: a.m,
        d_grid: &d_grid,
        figures: FIGURES.iter().map(|f| f.name).collect(),
    };
    let config_json = serde_json::to_vec(&run_config).expect("config serializes");
    let mut seeds = BTreeMap::from([
        ("master".to_string(), a.seed),
        ("init".to_string(), train_config.init_seed),
        ("shuffle".to_string(), train_config.shuffle_seed),
    ]);
    for (i, f) in FIGURES.iter().enumerate() {
        seeds.insert(format!("sweep_{}", f.name), derive_seed(a.seed, 100 + i as u64));
    }
    if a.data.synthetic {
        seeds.insert("synthetic_data".into(), a.data.data_seed);
    }
    let mut manifest = RunManifest::new(a.out_dir.join("manifest.json"), &config_json, seeds);

    fs::create_dir_all(a.out_dir.join("models")).map_err(|e| Error::io(a.out_dir.join("models"), e))?;
    let model_paths: Vec<String> = topologies.iter().map(|t| format!("models/{}.bin", t.id())).collect();
    for p in &model_paths {
        manifest.plan(p.clone(), "model");
    }
    for f in &FIGURES {
        manifest.plan(format!("{}.csv", f.name), "figure");
    }
    manifest.write()?;
    log_kv!(
        "reproduce_start",
        "out_dir" = a.out_dir.display(),
        "models" = topologies.len(),
        "figures" = FIGURES.len(),
        "config_hash" = manifest.config_hash
    );

    let outcome = run_plan(
        &a,
        &topologies,
        &model_paths,
        &train_config,
        &d_grid,
        custom,
        &mut manifest,
    );
    match outcome {
        Ok(()) => {
            manifest.finish(Status::Complete)?;
            log_kv!(
                "reproduce_done",
                "manifest" = manifest.path().display(),
                "seconds" = format!("{:.1}", manifest.wall_clock_seconds)
            );
            Ok(())
        }
        Err(e) => {
            let _ = manifest.finish(Status::Failed);
            Err(e)
        }
    }
}

fn run_plan(
    a: &ReproduceArgs,
    topologies: &[NetworkTopology],
    model_paths: &[String],
    train_config: &TrainConfig,
    d_grid: &[f64],
    custom: bool,
    manifest: &mut RunManifest,
) -> Result<(), Failure> {
    let mut models = Vec::with_capacity(topologies.len());
    for (topo, rel) in topologies.iter().zip(model_paths) {
        let (net, report) = train_topology(topo, &a.data, train_config)?;
        checkpoint::save(&net, a.out_dir.join(rel))?;
        manifest.models.push(ModelSummary {
            topology: topo.id(),
            path: rel.clone(),
            train_accuracy: report.train_accuracy,
            test_accuracy: report.test_accuracy,
            final_loss: report.final_loss(),
            amplification: weight_stats(&net).iter().map(|s| s.amplification).collect(),
        });
        manifest.mark_complete(rel)?;
        models.push(SweepModel::new(net));
    }

    let test = a
        .data
        .load(Split::Test, topologies[0].input_dim(), topologies[0].classes())?;
    for (i, fig) in FIGURES.iter().enumerate() {
        let chosen: Vec<SweepModel> = fig
            .models
            .indices(custom, models.len())
            .into_iter()
            .map(|k| models[k].clone())
            .collect();
        let mut config = SweepConfig {
            d_grid: d_grid.to_vec(),
            kinds: vec![NoiseKind::Additive, NoiseKind::Multiplicative],
            stages: fig.stages.to_vec(),
            layers: Vec::new(),
            repetitions: a.reps,
            seed: derive_seed(a.seed, 100 + i as u64),
            ..Default::default()
        };
        log_kv!("figure_start", "figure" = fig.name, "models" = chosen.len());
        let mut result = experiment::run_sweep(&config, &chosen, &test, a.workers)?;
        if fig.pooled {
            config.pooling = Some(PoolingConfig {
                m: a.m,
                scope: PoolScope::Noisy,
            });
            config.seed = derive_seed(config.seed, 1);
            let pooled = experiment::run_sweep(&config, &chosen, &test, a.workers)?;
            result = SweepResult {
                rows: result.rows.into_iter().chain(pooled.rows).collect(),
            };
        }
        let rel = format!("{}.csv", fig.name);
        experiment::emit_csv(&result, a.out_dir.join(&rel))?;
        manifest.mark_complete(&rel)?;
        log_kv!("figure_done", "figure" = fig.name, "rows" = result.rows.len());
    }
    Ok(())
}
