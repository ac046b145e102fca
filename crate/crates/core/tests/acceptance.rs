//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! MNIST is read from `NEURONOISE_DATA_DIR` or `<workspace>/data/mnist`;
//! without it the MNIST criteria print SKIP. Trained networks are cached
//! under the cargo target directory, keyed by training configuration and a
//! hash of the training code; set `NEURONOISE_ACCEPTANCE_RETRAIN=1` to
//! ignore the cache.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use sha2::{Digest, Sha256};

use neuronoise_core::analysis::{matrix_stats, weight_stats};
use neuronoise_core::checkpoint;
use neuronoise_core::dataset::{load_mnist, synthetic_dataset, LabeledDataset, Split};
use neuronoise_core::experiment::{self, default_d_grid, read_csv, run_sweep, to_csv_string, SweepConfig, SweepModel};
use neuronoise_core::mathcore::{GaussianSource, Matrix};
use neuronoise_core::network::{accuracy, forward_clean, softmax};
use neuronoise_core::noise::{evaluate_noisy, forward_noisy, NoiseKind, NoiseSpec, NoiseStage, NoisyAccuracy};
use neuronoise_core::pooling::{apply_pooling, evaluate_pooled, PoolSpec};
use neuronoise_core::training::{self, loss, loss_and_gradients, TrainConfig};
use neuronoise_core::{DenseNetwork, NetworkTopology};

/// Epochs for every network trained here. The default seed gives clean
/// accuracies near the reference values at this length.
const EPOCHS: usize = 8;
const TRAIN_SEED: u64 = 42;
const NOISE_SEED: u64 = 7;
const REPS: usize = 10;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

enum Verdict {
    Checks(Vec<Check>),
    Skip(String),
}

#[derive(Default)]
struct Report {
    results: Vec<(u32, &'static str, Verdict)>,
    failures: usize,
    skips: usize,
}

impl Report {
    fn record(&mut self, number: u32, title: &'static str, verdict: Verdict) {
        self.results.push((number, title, verdict));
    }

    fn print(&mut self) {
        self.results.sort_by_key(|r| r.0);
        for (number, title, verdict) in std::mem::take(&mut self.results) {
            self.print_one(number, title, verdict);
        }
    }

    fn print_one(&mut self, number: u32, title: &str, verdict: Verdict) {
        match verdict {
            Verdict::Skip(why) => {
                self.skips += 1;
                println!("SKIP criterion {number}: {title} ({why})");
            }
            Verdict::Checks(checks) => {
                let pass = checks.iter().all(|c| c.pass);
                if !pass {
                    self.failures += 1;
                }
                println!("{} criterion {number}: {title}", if pass { "PASS" } else { "FAIL" });
                for c in checks {
                    println!("    [{}] {}", if c.pass { "ok" } else { "FAILED" }, c.detail);
                }
            }
        }
    }
}

struct Mnist {
    train: LabeledDataset,
    test: LabeledDataset,
}

fn data_dir() -> PathBuf {
    std::env::var_os("NEURONOISE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load_data() -> Result<Mnist, String> {
    let dir = data_dir();
    let train = load_mnist(&dir, Split::Train).map_err(|e| e.to_string())?;
    let test = load_mnist(&dir, Split::Test).map_err(|e| e.to_string())?;
    Ok(Mnist { train, test })
}

struct Trained {
    net: DenseNetwork,
    clean: f64,
    train_seconds: f64,
    cached: bool,
}

fn code_hash() -> String {
    let mut h = Sha256::new();
    for src in [
        include_str!("../src/training.rs"),
        include_str!("../src/network.rs"),
        include_str!("../src/mathcore.rs"),
        include_str!("../src/dataset.rs"),
    ] {
        h.update(src.as_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Trains `hidden` on MNIST, or loads the cached result of an identical run.
fn trained(hidden: &[usize], data: &Mnist) -> Trained {
    let topo = NetworkTopology::mnist(hidden).unwrap();
    let config = TrainConfig {
        epochs: EPOCHS,
        ..TrainConfig::with_seed(TRAIN_SEED)
    };
    let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-models");
    let stem = format!("{}-e{}-s{}-{}", topo.id(), EPOCHS, TRAIN_SEED, code_hash());
    let (model_path, time_path) = (cache.join(format!("{stem}.bin")), cache.join(format!("{stem}.seconds")));
    let retrain = std::env::var_os("NEURONOISE_ACCEPTANCE_RETRAIN").is_some();
    if !retrain {
        if let (Ok(net), Ok(secs)) = (checkpoint::load(&model_path), fs::read_to_string(&time_path)) {
            if let Ok(train_seconds) = secs.trim().parse() {
                let clean = accuracy(&net, &data.test).unwrap();
                return Trained {
                    net,
                    clean,
                    train_seconds,
                    cached: true,
                };
            }
        }
    }
    let start = Instant::now();
    let mut net = training::init_weights(&topo, config.init_seed);
    training::train(&mut net, &data.train, &data.test, &config).unwrap();
    let train_seconds = start.elapsed().as_secs_f64();
    let _ = fs::create_dir_all(&cache);
    let _ = checkpoint::save(&net, &model_path);
    let _ = fs::write(&time_path, format!("{train_seconds}\n"));
    let clean = accuracy(&net, &data.test).unwrap();
    Trained {
        net,
        clean,
        train_seconds,
        cached: false,
    }
}

fn noisy(net: &DenseNetwork, data: &Mnist, kind: NoiseKind, stage: NoiseStage, layer: usize, d: f64) -> NoisyAccuracy {
    evaluate_noisy(
        net,
        &data.test,
        &NoiseSpec::new(kind, d, stage, [layer]),
        REPS,
        NOISE_SEED,
    )
    .unwrap()
}

fn in_band(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn criterion_1(small: &Trained, big: &Trained) -> Verdict {
    let source = |t: &Trained| if t.cached { "cached run" } else { "this run" };
    Verdict::Checks(vec![
        check(
            in_band(small.clean, 93.0, 95.5),
            format!("784-20-10 test accuracy {:.2}% in [93.0, 95.5]", small.clean),
        ),
        check(
            small.train_seconds <= 900.0,
            format!(
                "784-20-10 training took {:.1} s ({}), limit 900 s",
                small.train_seconds,
                source(small)
            ),
        ),
        check(
            in_band(big.clean, 96.5, 98.2),
            format!(
                "784-350-250-200-10 test accuracy {:.2}% in [96.5, 98.2] (trained in {:.1} s, {})",
                big.clean,
                big.train_seconds,
                source(big)
            ),
        ),
    ])
}

fn criterion_2_3(small: &Trained, data: &Mnist) -> (Verdict, Verdict) {
    let net = &small.net;
    let add1 = noisy(net, data, NoiseKind::Additive, NoiseStage::After, 2, 1.0);
    let mul1 = noisy(net, data, NoiseKind::Multiplicative, NoiseStage::After, 2, 1.0);
    let add2 = noisy(net, data, NoiseKind::Additive, NoiseStage::After, 2, 1e-2);
    let c2 = Verdict::Checks(vec![
        check(
            in_band(add1.mean, 25.0, 40.0),
            format!("additive D=1: {:.2} ± {:.2}% in [25, 40]", add1.mean, add1.std),
        ),
        check(
            in_band(mul1.mean, 40.0, 56.0),
            format!("multiplicative D=1: {:.2} ± {:.2}% in [40, 56]", mul1.mean, mul1.std),
        ),
        check(
            (small.clean - add2.mean).abs() <= 1.0,
            format!(
                "additive D=0.01: {:.2}% vs clean {:.2}% (gap {:.2}, limit 1)",
                add2.mean,
                small.clean,
                small.clean - add2.mean
            ),
        ),
    ]);
    let gap = mul1.mean - add1.mean;
    let c3 = Verdict::Checks(vec![check(
        gap >= 5.0,
        format!("multiplicative - additive at D=1: {gap:.2} points (need >= 5)"),
    )]);
    (c2, c3)
}

fn criterion_4(small: &Trained, data: &Mnist) -> Verdict {
    let mut checks = Vec::new();
    for kind in [NoiseKind::Additive, NoiseKind::Multiplicative] {
        for d in [1e-2, 1e-1, 1.0] {
            let before = noisy(&small.net, data, kind, NoiseStage::Before, 2, d);
            let after = noisy(&small.net, data, kind, NoiseStage::After, 2, d);
            checks.push(check(
                before.mean >= after.mean - 1.0,
                format!("{kind} D={d}: before {:.2}% vs after {:.2}%", before.mean, after.mean),
            ));
        }
    }
    let before = noisy(&small.net, data, NoiseKind::Additive, NoiseStage::Before, 2, 1.0);
    checks.push(check(
        small.clean - before.mean <= 5.0,
        format!(
            "additive D=1 before activation: {:.2}% vs clean {:.2}% (gap {:.2}, limit 5)",
            before.mean,
            small.clean,
            small.clean - before.mean
        ),
    ));
    Verdict::Checks(checks)
}

fn criterion_5(deep: &Trained, data: &Mnist) -> Verdict {
    let acc: Vec<NoisyAccuracy> = (2..=4)
        .map(|l| noisy(&deep.net, data, NoiseKind::Additive, NoiseStage::After, l, 0.1))
        .collect();
    let mut checks = Vec::new();
    for (i, pair) in acc.windows(2).enumerate() {
        let gap = pair[1].mean - pair[0].mean;
        let std = pair[0].std.max(pair[1].std);
        checks.push(check(
            gap > std,
            format!(
                "layer {} {:.2} ± {:.2}% < layer {} {:.2} ± {:.2}% (gap {gap:.2} vs std {std:.2})",
                i + 2,
                pair[0].mean,
                pair[0].std,
                i + 3,
                pair[1].mean,
                pair[1].std
            ),
        ));
    }
    Verdict::Checks(checks)
}

fn criterion_6(deep: &Trained) -> Verdict {
    let stats = weight_stats(&deep.net);
    let mut worst: f64 = 0.0;
    for (s, w) in stats.iter().zip(deep.net.weights()) {
        let (mut sum, mut sq) = (0.0, 0.0);
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                sum += w.get(r, c);
                sq += w.get(r, c) * w.get(r, c);
            }
        }
        let n = (w.rows() * w.cols()) as f64;
        let amp = w.rows() as f64 * sq / n;
        worst = worst
            .max((s.mean - sum / n).abs() / (sum / n).abs().max(1.0))
            .max((s.mean_square - sq / n).abs() / (sq / n).max(1.0))
            .max((s.amplification - amp).abs() / amp.max(1.0));
    }
    let amps: Vec<f64> = stats.iter().map(|s| s.amplification).collect();
    let listing = amps
        .iter()
        .zip(&stats)
        .map(|(a, s)| format!("W^{}={a:.2}", s.layer))
        .collect::<Vec<_>>()
        .join(" ");
    Verdict::Checks(vec![
        check(
            worst <= 1e-12,
            format!("double-loop oracle agreement, worst relative error {worst:.1e}"),
        ),
        check(
            amps[1..].iter().all(|&a| a < amps[0]),
            format!("N*eta of W^2 largest: {listing}"),
        ),
        check(
            amps[1..].windows(2).all(|p| p[0] < p[1]),
            "N*eta increasing over W^3, W^4, W^5",
        ),
    ])
}

/// Sample variance of the averaged output of one neuron's copies.
fn group_average_variance(net: &DenseNetwork, m: usize, draws: usize) -> f64 {
    let pooled = apply_pooling(net, &PoolSpec::new(m, [2])).unwrap();
    let spec = NoiseSpec::new(NoiseKind::Additive, 0.05, NoiseStage::After, [2]);
    let mut rng = GaussianSource::new(1000 + m as u64);
    let x = vec![0.5; net.topology().input_dim()];
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let t = forward_noisy(&pooled, &x, &spec, &mut rng).unwrap();
            t.activation(2)[..m].iter().sum::<f64>() / m as f64
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / draws as f64;
    samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64
}

fn random_net(sizes: &[usize], seed: u64, scale: f64) -> DenseNetwork {
    let topo = NetworkTopology::new(sizes.to_vec()).unwrap();
    let mut g = GaussianSource::new(seed);
    let w = sizes
        .windows(2)
        .map(|p| Matrix::new(p[0], p[1], g.draw(p[0] * p[1]).into_iter().map(|v| v * scale).collect()).unwrap())
        .collect();
    DenseNetwork::new(topo, w).unwrap()
}

fn criterion_7() -> Verdict {
    let net = random_net(&[8, 6, 5, 3], 77, 1.0);
    let mut checks = Vec::new();
    let base = group_average_variance(&net, 1, 10_000);
    for m in [1usize, 2, 3, 5] {
        let v = group_average_variance(&net, m, 10_000);
        let ratio = v / base;
        let target = 1.0 / (m * m) as f64;
        let exponent = if m > 1 {
            format!(", fitted exponent {:.3}", (base / v).ln() / (m as f64).ln())
        } else {
            String::new()
        };
        checks.push(check(
            (ratio / target - 1.0).abs() <= 0.25,
            format!("m={m}: variance ratio {ratio:.4} vs 1/m^2 = {target:.4}{exponent}"),
        ));
    }
    checks.push(check(
        apply_pooling(&net, &PoolSpec::new(1, [2, 3])).unwrap() == net,
        "m=1 pooling is a bitwise identity",
    ));
    let mut g = GaussianSource::new(5);
    let mut worst: f64 = 0.0;
    for m in [2, 3, 5] {
        let pooled = apply_pooling(&net, &PoolSpec::new(m, [2, 3])).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = g.draw(8).into_iter().map(|v| v.abs().min(1.0)).collect();
            let a = forward_clean(&net, &x).unwrap();
            let b = forward_clean(&pooled, &x).unwrap();
            for (p, q) in a.output().iter().zip(b.output()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    checks.push(check(
        worst <= 1e-12,
        format!("clean pooled output within {worst:.1e} of original (limit 1e-12)"),
    ));
    Verdict::Checks(checks)
}

fn criterion_8(deep: &Trained, data: &Mnist) -> Verdict {
    let mut checks = Vec::new();
    let mut compared = 0;
    for stage in [NoiseStage::After, NoiseStage::Before] {
        for kind in [NoiseKind::Additive, NoiseKind::Multiplicative] {
            for layer in 2..=4 {
                let mut losses = Vec::new();
                for d in default_d_grid() {
                    let spec = NoiseSpec::new(kind, d, stage, [layer]);
                    let plain = evaluate_noisy(&deep.net, &data.test, &spec, REPS, NOISE_SEED).unwrap();
                    if deep.clean - plain.mean < 2.0 {
                        continue;
                    }
                    compared += 1;
                    let pool = PoolSpec::new(3, [layer]);
                    let pooled = evaluate_pooled(&deep.net, &data.test, &spec, &pool, REPS, NOISE_SEED).unwrap();
                    if pooled.mean <= plain.mean {
                        losses.push(format!(
                            "D={d:.2e}: pooled {:.2} <= plain {:.2}",
                            pooled.mean, plain.mean
                        ));
                    }
                }
                if !losses.is_empty() {
                    checks.push(check(
                        false,
                        format!("{stage} {kind} layer {layer}: {}", losses.join("; ")),
                    ));
                }
            }
        }
    }
    if checks.is_empty() {
        checks.push(check(
            true,
            format!("pooling improved accuracy at all {compared} sampled (stage, kind, layer, D) points at least 2 below clean"),
        ));
    }
    for layer in 2..=4 {
        let spec = NoiseSpec::new(NoiseKind::Additive, 1.0, NoiseStage::Before, [layer]);
        let pooled = evaluate_pooled(
            &deep.net,
            &data.test,
            &spec,
            &PoolSpec::new(3, [layer]),
            REPS,
            NOISE_SEED,
        )
        .unwrap();
        checks.push(check(
            deep.clean - pooled.mean <= 2.0,
            format!(
                "pooled additive D=1 before activation, layer {layer}: {:.2}% vs clean {:.2}%",
                pooled.mean, deep.clean
            ),
        ));
    }
    Verdict::Checks(checks)
}

fn perturbed(net: &DenseNetwork, k: usize, idx: usize, h: f64) -> DenseNetwork {
    let mut weights = net.weights().to_vec();
    let w = &weights[k];
    let mut data = w.as_slice().to_vec();
    data[idx] += h;
    weights[k] = Matrix::new(w.rows(), w.cols(), data).unwrap();
    DenseNetwork::new(net.topology().clone(), weights).unwrap()
}

fn criterion_9() -> Verdict {
    let start = Instant::now();
    let mut checks = Vec::new();

    // Norm-wise relative error of every weight gradient.
    let mut worst_grad: f64 = 0.0;
    for (i, sizes) in [&[4, 3, 2][..], &[5, 4, 4, 3], &[3, 6, 2, 5, 4]].iter().enumerate() {
        let net = random_net(sizes, 10 + i as u64, 0.8);
        let mut g = GaussianSource::new(20 + i as u64);
        let n = 6;
        let x: Vec<f64> = g.draw(n * sizes[0]).into_iter().map(|v| v.abs().min(1.0)).collect();
        let y: Vec<usize> = (0..n).map(|j| j % sizes[sizes.len() - 1]).collect();
        let (_, grads) = loss_and_gradients(&net, &x, &y).unwrap();
        let h = 1e-5;
        for (k, gk) in grads.iter().enumerate() {
            let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
            for (idx, &ga) in gk.as_slice().iter().enumerate() {
                let gn = (loss(&perturbed(&net, k, idx, h), &x, &y).unwrap()
                    - loss(&perturbed(&net, k, idx, -h), &x, &y).unwrap())
                    / (2.0 * h);
                diff += (ga - gn).powi(2);
                norm_a += ga * ga;
                norm_n += gn * gn;
            }
            worst_grad = worst_grad.max(diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()));
        }
    }
    checks.push(check(
        worst_grad <= 1e-6,
        format!("gradient vs central differences, worst relative error {worst_grad:.2e} (limit 1e-6)"),
    ));

    let mut identical = true;
    let mut g = GaussianSource::new(3);
    for seed in 0..20 {
        let net = random_net(&[5, 4, 4, 3], seed, 1.5);
        let x: Vec<f64> = g.draw(5).into_iter().map(|v| v.abs().min(1.0)).collect();
        let clean = forward_clean(&net, &x).unwrap();
        for kind in [NoiseKind::Additive, NoiseKind::Multiplicative, NoiseKind::Both] {
            for stage in [NoiseStage::Before, NoiseStage::After] {
                let spec = NoiseSpec::new(kind, 0.0, stage, [2, 3]);
                let t = forward_noisy(&net, &x, &spec, &mut GaussianSource::new(seed)).unwrap();
                identical &= t.bitwise_eq(&clean);
            }
        }
    }
    checks.push(check(
        identical,
        "zero-intensity noisy passes bitwise equal to clean passes",
    ));

    let mut worst_sum: f64 = 0.0;
    for scale in [1.0, 30.0, 700.0] {
        for _ in 0..200 {
            let z: Vec<f64> = g.draw(10).into_iter().map(|v| v * scale).collect();
            worst_sum = worst_sum.max((softmax(&z).iter().sum::<f64>() - 1.0).abs());
        }
    }
    checks.push(check(
        worst_sum <= 1e-12,
        format!("softmax sums within {worst_sum:.1e} of 1 (limit 1e-12)"),
    ));

    let eta_ok = (0..100).all(|i| {
        let w = Matrix::new(
            7,
            5,
            g.draw(35).into_iter().map(|v| v + (i as f64 - 50.0) / 25.0).collect(),
        )
        .unwrap();
        let s = matrix_stats(2, &w);
        s.mean_square >= s.mean_squared
    });
    checks.push(check(eta_ok, "eta >= mu^2 on 100 random matrices"));

    let data = synthetic_dataset(1, 120, 5, 3, Split::Test).unwrap();
    let models = [SweepModel::new(random_net(&[5, 4, 4, 3], 1, 2.0))];
    let config = SweepConfig {
        d_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
        stages: vec![NoiseStage::Before, NoiseStage::After],
        repetitions: 4,
        seed: 9,
        ..Default::default()
    };
    let one = run_sweep(&config, &models, &data, 1).unwrap();
    let many = run_sweep(&config, &models, &data, 4).unwrap();
    let text = to_csv_string(&one);
    checks.push(check(
        read_csv(text.as_bytes()).unwrap() == one && to_csv_string(&read_csv(text.as_bytes()).unwrap()) == text,
        format!("CSV round trip of a {}-row sweep is exact", one.rows.len()),
    ));
    checks.push(check(
        to_csv_string(&many) == text,
        "sweep output identical for 1 and 4 workers",
    ));
    let empty = experiment::SweepResult::default();
    checks.push(check(
        read_csv(to_csv_string(&empty).as_bytes()).unwrap() == empty,
        "empty sweep round-trips as a header-only CSV",
    ));

    let secs = start.elapsed().as_secs_f64();
    checks.push(check(
        secs <= 60.0,
        format!("property suite took {secs:.1} s (limit 60 s)"),
    ));
    Verdict::Checks(checks)
}

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored.
    let start = Instant::now();
    let mut report = Report::default();

    report.record(9, "property suites", criterion_9());
    report.record(7, "pooling variance law", criterion_7());

    match load_data() {
        Err(why) => {
            let why = format!("MNIST unavailable: {why}");
            for (n, title) in [
                (1, "clean training accuracy"),
                (2, "after-activation degradation endpoints"),
                (3, "kind ordering"),
                (4, "stage dominance"),
                (5, "layer ordering"),
                (6, "weight-statistics pattern"),
                (8, "pooling accuracy gains"),
            ] {
                report.record(n, title, Verdict::Skip(why.clone()));
            }
        }
        Ok(data) => {
            let small = trained(&[20], &data);
            let deep = trained(&[20, 20, 20], &data);
            let big = trained(&[350, 250, 200], &data);
            report.record(1, "clean training accuracy", criterion_1(&small, &big));
            let (c2, c3) = criterion_2_3(&small, &data);
            report.record(2, "after-activation degradation endpoints", c2);
            report.record(3, "kind ordering", c3);
            report.record(4, "stage dominance", criterion_4(&small, &data));
            report.record(5, "layer ordering", criterion_5(&deep, &data));
            report.record(6, "weight-statistics pattern", criterion_6(&deep));
            report.record(8, "pooling accuracy gains", criterion_8(&deep, &data));
        }
    }

    report.print();
    println!(
        "acceptance: {} failed, {} skipped, {:.1} s",
        report.failures,
        report.skips,
        start.elapsed().as_secs_f64()
    );
    if report.failures > 0 {
        std::process::exit(1);
    }
}
