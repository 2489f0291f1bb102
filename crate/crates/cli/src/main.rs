use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ctf_rpu::device_model::{fit_power_law, PulseTrace};
use ctf_rpu::runner::{self, ExperimentConfig, Outcome, RunOptions};

#[derive(Parser)]
#[command(
    name = "ctfsim",
    version,
    about = "Charge-trap-flash RPU crossbar simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    config: PathBuf,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel repetitions (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes
    Run(Common),
    /// Repeat a classification experiment for several weight scales k
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<f64>,
    },
    /// Repeat a classification experiment for several noise fractions
    SweepNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        noise: Vec<f64>,
    },
    /// Fit v(n) = x1 n^x2 + x3 to a two-column (pulse, v_T) CSV trace
    Fit { trace: PathBuf },
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, RunOptions)> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((
        cfg,
        RunOptions {
            jobs: common.jobs,
            out: Some(out),
        },
    ))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(common) => {
            let (cfg, opts) = prepare(&common)?;
            match runner::run(&cfg, &opts)? {
                Outcome::Single(s) => print!("{}", s.table()),
                Outcome::Sweep(t) => print!("{}", t.table()),
            }
        }
        Command::SweepK { common, k } => {
            let (cfg, opts) = prepare(&common)?;
            print!("{}", runner::run_k_sweep(&cfg, &k, &opts)?.table());
        }
        Command::SweepNoise { common, noise } => {
            let (cfg, opts) = prepare(&common)?;
            print!("{}", runner::run_noise_sweep(&cfg, &noise, &opts)?.table());
        }
        Command::Fit { trace } => {
            let trace = PulseTrace::from_csv_path(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let r = fit_power_law(&trace)?;
            println!("x1 = {:.6e}", r.fit.x1);
            println!("x2 = {:.6}", r.fit.x2);
            println!("x3 = {:.6}", r.fit.x3);
            println!("mse = {:.3e} ({} iterations)", r.mse, r.iterations);
        }
    }
    Ok(())
}
