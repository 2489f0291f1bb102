//! Experiment orchestration: repetitions with pre-assigned seeds, parameter
//! sweeps, and CSV/summary output.
//!
//! Output layout under the chosen directory:
//! `<label>/{runs.csv, aggregate.csv, summary.txt, config.toml, metadata.toml}`
//! plus `checkpoints.csv` (classification) or `episodes.csv` (Mountain Car).
//! Everything except `metadata.toml` and the `elapsed_s` column of
//! `checkpoints.csv` is a pure function of config and seed.

pub mod config;
pub mod summary;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data_io::{load_features, load_mnist_dir, LabeledDataset};
use crate::device_model::DeviceModel;
use crate::error::{Error, Result};
use crate::rl_suite::agent::{final_mean_reward, run_episodes, write_episode_csv, EpisodeRecord};
use crate::rl_suite::{QAgent, TileCoder};
use crate::seeding::{repetition_seed, stream, Stream};
use crate::trainer::{evaluate, mlp, Network, TrainingLog, TrainingSession};

pub use config::{BackendKind, DeviceConfig, ExperimentConfig, ExperimentKind};
pub use summary::{MeanSe, RepResult, RunSummary};

pub const CLASSIFICATION_METRICS: [&str; 4] = [
    "test_accuracy",
    "train_accuracy",
    "online_train_accuracy",
    "saturation_fraction",
];
pub const CONTROL_METRICS: [&str; 4] = [
    "final_reward",
    "early_steps",
    "late_steps",
    "saturation_fraction",
];

/// Episodes averaged for `final_reward`.
pub const FINAL_EPISODES: usize = 50;
/// Episodes averaged at each end for `early_steps` / `late_steps`.
pub const PROGRESS_EPISODES: usize = 100;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core. Never changes results.
    pub jobs: Option<usize>,
    /// Directory to write results under; nothing is written when `None`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Result of `run`: one summary, or one per swept value.
#[derive(Debug, Clone)]
pub enum Outcome {
    Single(RunSummary),
    Sweep(SweepTable),
}

/// Runs whatever `cfg.kind` describes; sweeps use the config's value lists.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    match cfg.kind {
        ExperimentKind::KSweep => run_k_sweep(cfg, &cfg.k_values, opts).map(Outcome::Sweep),
        ExperimentKind::NoiseSweep => {
            run_noise_sweep(cfg, &cfg.noise_values, opts).map(Outcome::Sweep)
        }
        _ => run_experiment(cfg, opts).map(Outcome::Single),
    }
}

/// All repetitions of one configuration.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let started = Started::now();
    let label = format!("{}-{}", cfg.kind.name(), backend_name(cfg));
    let pool = pool(opts.jobs)?;
    let summary = if cfg.kind == ExperimentKind::MountainCar {
        let results = pool.install(|| {
            (0..cfg.repetitions)
                .into_par_iter()
                .map(|rep| control_rep(cfg, rep))
                .collect::<Result<Vec<_>>>()
        })?;
        let (reps, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let summary = RunSummary::new(&label, &CONTROL_METRICS, reps);
        if let Some(dir) = &opts.out {
            let dir = dir.join(&label);
            write_summary_files(&dir, &summary, cfg, &started, opts)?;
            write_episode_logs(&dir, &summary, &logs)?;
        }
        summary
    } else {
        let splits = load_splits(cfg)?;
        let results = pool.install(|| {
            (0..cfg.repetitions)
                .into_par_iter()
                .map(|rep| classification_rep(cfg, &splits, rep))
                .collect::<Result<Vec<_>>>()
        })?;
        let (reps, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let summary = RunSummary::new(&label, &CLASSIFICATION_METRICS, reps);
        if let Some(dir) = &opts.out {
            let dir = dir.join(&label);
            write_summary_files(&dir, &summary, cfg, &started, opts)?;
            write_checkpoint_logs(&dir, &summary, &logs)?;
        }
        summary
    };
    log::info!("{}", summary.table().trim_end());
    Ok(summary)
}

/// Conductance window a weight scale `k` maps `|w| <= 0.15` onto, with the
/// level count and worst noise-to-step ratio inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KDiagnostics {
    pub k: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    pub level_count: u64,
    pub max_noise_ratio: f64,
}

pub fn k_diagnostics(device: &DeviceModel, k: f64) -> Result<KDiagnostics> {
    let half = 0.15 / k;
    let c = device.g_center();
    let lo = (c - half).max(device.g_min());
    let hi = (c + half).min(device.g_max());
    Ok(KDiagnostics {
        k,
        range_lo: lo,
        range_hi: hi,
        level_count: device.level_count(lo, hi)?,
        max_noise_ratio: device.max_noise_ratio(lo, hi)?,
    })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: RunSummary,
    pub diagnostics: Option<KDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub parameter: &'static str,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn point(&self, value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value)
    }

    pub fn stat(&self, value: f64, metric: &str) -> Option<MeanSe> {
        self.point(value)?.summary.stat(metric)
    }

    /// One row per swept value: means and standard errors of every metric,
    /// then the diagnostics when present.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let Some(first) = self.points.first() else {
            return Ok(());
        };
        let mut header = vec![self.parameter.to_string(), "n".to_string()];
        for m in &first.summary.metrics {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_se"));
        }
        let diag = first.diagnostics.is_some();
        if diag {
            header.extend(
                ["range_lo", "range_hi", "level_count", "max_noise_ratio"].map(String::from),
            );
        }
        out.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![format!("{}", p.value), p.summary.reps.len().to_string()];
            for m in &p.summary.metrics {
                let s = p.summary.stat(m).expect("own metric");
                row.push(format!("{:.6}", s.mean));
                row.push(format!("{:.6}", s.se));
            }
            if let Some(d) = p.diagnostics {
                row.push(format!("{:.6}", d.range_lo));
                row.push(format!("{:.6}", d.range_hi));
                row.push(d.level_count.to_string());
                row.push(format!("{:.6}", d.max_noise_ratio));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>8}  {:>18}  {:>18}", self.parameter, "test", "train");
        if self.points.iter().any(|p| p.diagnostics.is_some()) {
            s.push_str(&format!("  {:>8}  {:>8}", "levels", "σ/μ max"));
        }
        s.push('\n');
        for p in &self.points {
            let cell = |m: &str| {
                p.summary
                    .stat(m)
                    .map(|st| format!("{:.4} ± {:.4}", st.mean, st.se))
                    .unwrap_or_else(|| "-".into())
            };
            s.push_str(&format!(
                "{:>8}  {:>18}  {:>18}",
                p.value,
                cell("test_accuracy"),
                cell("train_accuracy")
            ));
            if let Some(d) = p.diagnostics {
                s.push_str(&format!(
                    "  {:>8}  {:>8.3}",
                    d.level_count, d.max_noise_ratio
                ));
            }
            s.push('\n');
        }
        s
    }
}

/// Repeats the classification experiment for every `k`, keeping `alpha`.
pub fn run_k_sweep(
    cfg: &ExperimentConfig,
    k_values: &[f64],
    opts: &RunOptions,
) -> Result<SweepTable> {
    let variants = k_values
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.k = k;
            c
        })
        .collect();
    let mut table = run_sweep(cfg, "k", k_values, variants, opts)?;
    let device = cfg.device_model()?;
    for p in &mut table.points {
        p.diagnostics = Some(k_diagnostics(&device, p.value)?);
    }
    if let Some(dir) = &opts.out {
        write_file(&dir.join("k_sweep").join("sweep.csv"), |w| {
            table.write_csv(w)
        })?;
        write_file(&dir.join("k_sweep").join("summary.txt"), |w| {
            Ok(w.write_all(table.table().as_bytes())?)
        })?;
    }
    Ok(table)
}

/// Repeats the classification experiment for every noise level.
pub fn run_noise_sweep(
    cfg: &ExperimentConfig,
    noise_values: &[f64],
    opts: &RunOptions,
) -> Result<SweepTable> {
    let variants = noise_values
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.noise_fraction = n;
            c
        })
        .collect();
    let table = run_sweep(cfg, "noise_fraction", noise_values, variants, opts)?;
    if let Some(dir) = &opts.out {
        write_file(&dir.join("noise_sweep").join("sweep.csv"), |w| {
            table.write_csv(w)
        })?;
        write_file(&dir.join("noise_sweep").join("summary.txt"), |w| {
            Ok(w.write_all(table.table().as_bytes())?)
        })?;
    }
    Ok(table)
}

fn run_sweep(
    base: &ExperimentConfig,
    parameter: &'static str,
    values: &[f64],
    variants: Vec<ExperimentConfig>,
    opts: &RunOptions,
) -> Result<SweepTable> {
    if base.kind == ExperimentKind::MountainCar {
        return Err(Error::Config(
            "sweeps run on classification experiments".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::Config(format!("no {parameter} values to sweep")));
    }
    for v in &variants {
        v.validate()?;
    }
    let started = Started::now();
    let splits = load_splits(base)?;
    let tasks: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|i| (0..base.repetitions).map(move |rep| (i, rep)))
        .collect();
    let results = pool(opts.jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, rep)| classification_rep(&variants[i], &splits, rep))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut results = results.into_iter();
    let mut points = Vec::with_capacity(values.len());
    for (&value, cfg) in values.iter().zip(&variants) {
        let (reps, logs): (Vec<_>, Vec<_>) = results.by_ref().take(base.repetitions).unzip();
        let label = format!(
            "{}-{}-{parameter}={value}",
            base.kind.name(),
            backend_name(cfg)
        );
        let summary = RunSummary::new(label, &CLASSIFICATION_METRICS, reps);
        if let Some(dir) = &opts.out {
            let dir = dir
                .join(sweep_dir(parameter))
                .join(format!("{parameter}={value}"));
            write_summary_files(&dir, &summary, cfg, &started, opts)?;
            write_checkpoint_logs(&dir, &summary, &logs)?;
        }
        log::info!("{}", summary.table().trim_end());
        points.push(SweepPoint {
            value,
            summary,
            diagnostics: None,
        });
    }
    Ok(SweepTable { parameter, points })
}

fn sweep_dir(parameter: &str) -> &'static str {
    if parameter == "k" {
        "k_sweep"
    } else {
        "noise_sweep"
    }
}

fn backend_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.backend {
        BackendKind::Crossbar => "crossbar",
        BackendKind::Float => "float",
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Loads (or generates) the train/test data `cfg` names, applying the
/// configured size limits.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let (train, test) = match cfg.kind {
        ExperimentKind::ToySmoke => {
            let s = toy_splits(cfg.seed);
            (s.train, s.test)
        }
        ExperimentKind::Cifar10 | ExperimentKind::Cifar100 => {
            let need = |p: &Option<PathBuf>, what: &str| {
                p.clone()
                    .ok_or_else(|| Error::Config(format!("{} needs `{what}`", cfg.kind.name())))
            };
            let train = load_features(need(&cfg.train_features, "train_features")?)?;
            let test = load_features(need(&cfg.test_features, "test_features")?)?;
            let classes = if cfg.kind == ExperimentKind::Cifar10 {
                10
            } else {
                100
            };
            if train.n_classes() != classes || test.n_features() != train.n_features() {
                return Err(Error::Config(format!(
                    "feature files do not look like {}: {} classes, {} / {} features",
                    cfg.kind.name(),
                    train.n_classes(),
                    train.n_features(),
                    test.n_features()
                )));
            }
            (train, test)
        }
        _ => {
            if !cfg.mnist_dir.is_dir() {
                return Err(Error::MissingData(cfg.mnist_dir.clone()));
            }
            load_mnist_dir(&cfg.mnist_dir)?
        }
    };
    let limit = |d: LabeledDataset, n: Option<usize>| match n {
        Some(n) if n < d.len() => d.head(n),
        _ => d,
    };
    Ok(Splits {
        train: limit(train, cfg.train_limit),
        test: limit(test, cfg.test_limit),
    })
}

/// Linearly separable toy task: four classes, each lighting up its own pair
/// of eight non-negative features on top of uniform clutter.
pub fn toy_splits(seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7011);
    let mut make = |n: usize| {
        let (n_features, n_classes) = (8, 4);
        let mut features = Vec::with_capacity(n * n_features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % n_classes;
            for f in 0..n_features {
                let base = if f / 2 == label { 1.0 } else { 0.0 };
                features.push(base + rng.random_range(0.0..0.3f32));
            }
            labels.push(label as u16);
        }
        LabeledDataset::new(n_features, n_classes, features, labels).expect("toy data is valid")
    };
    let train = make(400);
    let test = make(200);
    Splits { train, test }
}

fn classification_rep(
    cfg: &ExperimentConfig,
    splits: &Splits,
    rep: usize,
) -> Result<(RepResult, TrainingLog)> {
    let seed = repetition_seed(cfg.seed, rep);
    let backend = cfg.backend()?;
    let mut widths = vec![splits.train.n_features()];
    widths.extend(&cfg.hidden);
    widths.push(splits.train.n_classes());
    let net = Network::new(
        mlp(&widths),
        &backend,
        cfg.bias,
        &mut stream(seed, Stream::Init),
    )?;
    let mut session = TrainingSession::new(net, seed, cfg.checkpoint_every);
    for _ in 0..cfg.epochs {
        session.train_epoch(&splits.train, Some(&splits.test))?;
    }
    let last = *session.log().last().expect("an epoch always checkpoints");
    let train_accuracy = evaluate(session.network(), &splits.train)?;
    let result = RepResult {
        run_id: rep,
        seed,
        values: vec![
            last.test_accuracy.expect("test set given"),
            train_accuracy,
            last.train_accuracy,
            last.saturation_fraction,
        ],
    };
    log::debug!("{} rep {rep}: {:?}", cfg.kind.name(), result.values);
    Ok((result, session.log().clone()))
}

fn control_rep(cfg: &ExperimentConfig, rep: usize) -> Result<(RepResult, Vec<EpisodeRecord>)> {
    let seed = repetition_seed(cfg.seed, rep);
    let backend = cfg.backend()?;
    let mut agent = QAgent::new(
        &backend,
        TileCoder::mountain_car(),
        cfg.epsilon,
        cfg.gamma,
        &mut stream(seed, Stream::Init),
    )?;
    let records = run_episodes(
        &mut agent,
        cfg.episodes,
        &mut stream(seed, Stream::Environment),
        &mut stream(seed, Stream::Policy),
    )?;
    let mean_steps =
        |r: &[EpisodeRecord]| r.iter().map(|e| e.steps as f64).sum::<f64>() / r.len().max(1) as f64;
    let n = PROGRESS_EPISODES.min(records.len());
    let result = RepResult {
        run_id: rep,
        seed,
        values: vec![
            final_mean_reward(&records, FINAL_EPISODES),
            mean_steps(&records[..n]),
            mean_steps(&records[records.len() - n..]),
            agent.network().saturation_fraction(),
        ],
    };
    log::debug!("mountain_car rep {rep}: {:?}", result.values);
    Ok((result, records))
}

struct Started {
    wall: SystemTime,
    clock: Instant,
}

impl Started {
    fn now() -> Self {
        Self {
            wall: SystemTime::now(),
            clock: Instant::now(),
        }
    }
}

#[derive(Serialize)]
struct Metadata {
    started_unix_s: u64,
    elapsed_s: f64,
    jobs: usize,
    version: &'static str,
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_summary_files(
    dir: &Path,
    summary: &RunSummary,
    cfg: &ExperimentConfig,
    started: &Started,
    opts: &RunOptions,
) -> Result<()> {
    write_file(&dir.join("runs.csv"), |w| summary.write_runs_csv(w))?;
    write_file(&dir.join("aggregate.csv"), |w| {
        summary.write_aggregate_csv(w)
    })?;
    write_file(&dir.join("summary.txt"), |w| {
        Ok(w.write_all(summary.table().as_bytes())?)
    })?;
    write_file(&dir.join("config.toml"), |w| {
        Ok(w.write_all(cfg.to_toml().as_bytes())?)
    })?;
    let meta = Metadata {
        started_unix_s: started
            .wall
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        elapsed_s: started.clock.elapsed().as_secs_f64(),
        jobs: opts.jobs.unwrap_or_else(rayon::current_num_threads),
        version: env!("CARGO_PKG_VERSION"),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join("metadata.toml"), |w| {
        Ok(w.write_all(text.as_bytes())?)
    })
}

fn write_checkpoint_logs(dir: &Path, summary: &RunSummary, logs: &[TrainingLog]) -> Result<()> {
    write_file(&dir.join("checkpoints.csv"), |w| {
        for (i, (rep, log)) in summary.reps.iter().zip(logs).enumerate() {
            log.write_csv(rep.run_id, rep.seed, i == 0, &mut *w)?;
        }
        Ok(())
    })
}

fn write_episode_logs(dir: &Path, summary: &RunSummary, logs: &[Vec<EpisodeRecord>]) -> Result<()> {
    write_file(&dir.join("episodes.csv"), |w| {
        for (i, (rep, records)) in summary.reps.iter().zip(logs).enumerate() {
            write_episode_csv(records, rep.run_id, i == 0, &mut *w)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(backend: BackendKind, noise: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(ExperimentKind::ToySmoke);
        cfg.backend = backend;
        cfg.noise_fraction = noise;
        cfg
    }

    #[test]
    fn toy_smoke_reaches_high_accuracy() {
        let opts = RunOptions {
            jobs: Some(1),
            out: None,
        };
        let float = run_experiment(&toy(BackendKind::Float, 0.0), &opts).unwrap();
        assert_eq!(float.stat("test_accuracy").unwrap().mean, 1.0);
        let xbar = run_experiment(&toy(BackendKind::Crossbar, 0.0), &opts).unwrap();
        assert!(xbar.stat("test_accuracy").unwrap().mean >= 0.95);
    }

    #[test]
    fn k_diagnostics_shrink_with_k() {
        let dev = DeviceModel::published(0.1);
        let d: Vec<_> = [1.0, 2.0, 4.0, 6.0, 10.0, 20.0]
            .iter()
            .map(|&k| k_diagnostics(&dev, k).unwrap())
            .collect();
        assert!(d.windows(2).all(|w| w[1].level_count < w[0].level_count));
        assert!(d
            .windows(2)
            .all(|w| w[1].max_noise_ratio <= w[0].max_noise_ratio));
        // k = 1 wants [-0.35, -0.05]; the floor clips it
        assert_eq!(d[0].range_lo, dev.g_min());
        assert!((d[3].range_hi - d[3].range_lo - 0.05).abs() < 1e-12);
    }

    #[test]
    fn missing_mnist_is_reported() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Mnist);
        cfg.mnist_dir = PathBuf::from("/nonexistent/mnist");
        let r = run_experiment(&cfg, &RunOptions::default());
        assert!(matches!(r, Err(Error::MissingData(_))));
    }

    #[test]
    fn sweeps_reject_control_tasks() {
        let cfg = ExperimentConfig::new(ExperimentKind::MountainCar);
        assert!(run_k_sweep(&cfg, &[1.0], &RunOptions::default()).is_err());
    }
}
