use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diamond_bench::config::{Estimator, ExperimentConfig, Figure};
use diamond_bench::run::{resolve, Overrides};
use diamond_bench::{run_experiment, BenchError};

/// Runs one diamond-map experiment and writes samples.csv, metrics.jsonl,
/// config-echo.json and report.svg to the output directory.
///
/// Exit codes: 0 success, 2 configuration error, 3 numerical-domain error,
/// 1 anything else. DIAMOND_BENCH_THREADS caps the worker threads.
#[derive(Parser, Debug)]
#[command(name = "diamond-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Marginal draws with oracle density, score and denoiser.
    Oracle(Common),
    /// Unguided sampling.
    Sample(Common),
    /// Posterior draws given one noisy state.
    Posterior(Common),
    /// One transition with the early-stop, naive and reference kernels.
    DdpmStep(Common),
    /// Value and gradient estimates at one state.
    Value(Common),
    /// Guided sampling towards the reward-tilted distribution.
    Guide(Common),
    /// Sequential Monte Carlo with value potentials.
    Smc(Common),
    /// Greedy search over particles.
    Search(Common),
    /// Best-of-N over one-step samples.
    Bon(Common),
    /// Trains a small diamond map and writes model.ckpt.
    Distill(Common),
    /// Figure reports; `fig2` draws the early-stop time surface.
    Report {
        #[arg(value_enum, default_value = "fig2")]
        figure: Figure,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config. Optional for `report`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RK4 steps per flow or diamond-map evaluation.
    #[arg(long)]
    inner_steps: Option<usize>,
    /// Time clamp c: times are kept in [c, 1 - c].
    #[arg(long)]
    t_clamp: Option<f64>,
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
    /// Inner draws (value, guide), particles (smc, search) or candidates (bon).
    #[arg(long)]
    particles: Option<usize>,
    /// SNR shift of the weighted estimator.
    #[arg(long)]
    lambda: Option<f64>,
    /// Repetitions (value) or independent runs (search).
    #[arg(long)]
    seeds: Option<usize>,
    /// `oracle` or a checkpoint path written by `distill`.
    #[arg(long)]
    map: Option<String>,
}

impl Command {
    fn parts(self) -> (&'static str, Common, Option<Figure>) {
        match self {
            Command::Oracle(c) => ("oracle", c, None),
            Command::Sample(c) => ("sample", c, None),
            Command::Posterior(c) => ("posterior", c, None),
            Command::DdpmStep(c) => ("ddpm-step", c, None),
            Command::Value(c) => ("value", c, None),
            Command::Guide(c) => ("guide", c, None),
            Command::Smc(c) => ("smc", c, None),
            Command::Search(c) => ("search", c, None),
            Command::Bon(c) => ("bon", c, None),
            Command::Distill(c) => ("distill", c, None),
            Command::Report { figure, common } => ("report", common, Some(figure)),
        }
    }
}

fn configure_threads() -> Result<(), BenchError> {
    let Ok(value) = std::env::var("DIAMOND_BENCH_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        BenchError::Config(format!("DIAMOND_BENCH_THREADS must be a positive integer, got {value:?}"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<PathBuf, BenchError> {
    configure_threads()?;
    let (name, common, figure) = cli.command.parts();
    let cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.clone(), source })?;
            ExperimentConfig::from_json(&text)?
        }
        None if name == "report" => ExperimentConfig::default(),
        None => return Err(BenchError::Config(format!("`{name}` needs --config"))),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
        inner_steps: common.inner_steps,
        t_clamp: common.t_clamp,
        estimator: common.estimator,
        particles: common.particles,
        lambda: common.lambda,
        seeds: common.seeds,
        map: common.map,
        figure,
    };
    let cfg = resolve(name, cfg, &overrides)?;
    run_experiment(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("diamond-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
