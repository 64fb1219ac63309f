//! Command-line front end: simulation, fitting, evaluation, the convergence
//! and robustness studies, theory-bound reports and order-book fits.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use marked_ratio::bounds::{bounds_report, BoundsInput};
use marked_ratio::estimators::{fit, BundleInfo, FittedModel, Method, NetShape};
use marked_ratio::harness::{
    evaluate_fit, run_convergence_study, run_lob_fit, run_robustness_grid, run_single_fit, ExperimentConfig,
    LobFitConfig, LobSource, ModelChoice, StudyResult,
};
use marked_ratio::metrics::{quantile_grid, DEFAULT_GRID_INTERVALS, EVAL_SEED_OFFSET};
use marked_ratio::sample::MarkedPointSample;
use marked_ratio::sim::simulate;

#[derive(Parser)]
#[command(name = "marked-ratio", version, about = "Deep intensity-ratio estimation for marked point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self, fallback: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?,
            None => fallback,
        };
        if let Some(seed) = self.seed {
            config.base_seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    Benchmark,
    Symmetric,
}

impl From<ModelArg> for ModelChoice {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Benchmark => ModelChoice::Benchmark,
            ModelArg::Symmetric => ModelChoice::Symmetric,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one sample and write it as a directory.
    Simulate {
        #[arg(long, default_value_t = 1000.0)]
        horizon: f64,
        #[arg(long, value_enum, default_value = "benchmark")]
        model: ModelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one method to a sample directory and write a model bundle.
    Fit {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, default_value = "two-step")]
        method: Method,
        #[arg(long, default_value_t = NetShape::default().n_layers)]
        layers: usize,
        #[arg(long, default_value_t = NetShape::default().width)]
        width: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a model bundle against the generating model on a fresh sample.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "benchmark")]
        model: ModelArg,
        /// Evaluation seed; defaults to the training seed plus the evaluation offset.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_GRID_INTERVALS)]
        intervals: usize,
        /// Where to write `evaluation.json`; stdout only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One fit per method with learned-function and probability curves.
    Single(Common),
    /// Errors across horizons and their log-log slopes.
    Convergence(Common),
    /// Errors across network shapes at a fixed horizon.
    Robustness(Common),
    /// Closed-form theory quantities from a JSON input document.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit order-book trade data, or a synthetic stream with a known law.
    LobFit {
        /// One CSV per session.
        #[arg(long, num_args = 1.., required_unless_present = "synthetic")]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        tick_size: f64,
        /// Generate a synthetic stream of this many seconds instead of reading files.
        #[arg(long, conflicts_with = "input")]
        synthetic: Option<f64>,
        #[arg(long, num_args = 1.., default_values = ["two-step"])]
        method: Vec<Method>,
        #[arg(long, default_value_t = NetShape::default().n_layers)]
        layers: usize,
        #[arg(long, default_value_t = NetShape::default().width)]
        width: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn summarize(result: &StudyResult) {
    for s in &result.slopes {
        match &s.fit {
            Some(f) => println!("{} {} slope {:.4} (se {:?})", s.method.name(), s.measure.name(), f.slope, f.std_error),
            None => println!("{} {} slope NA", s.method.name(), s.measure.name()),
        }
    }
    for a in &result.aggregates {
        println!(
            "{} T={} ({}, {}) n={} eps_l2 {:.5} eps_linf {:.5} risk {:.5}",
            a.method.name(),
            a.horizon,
            a.shape.n_layers,
            a.shape.width,
            a.count,
            a.eps_l2,
            a.eps_linf,
            a.risk
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { horizon, model, seed, out } => {
            let sample = simulate(&ModelChoice::from(model).build(), horizon, seed)?;
            sample.write_dir(&out)?;
            println!("{} events over T = {horizon} written to {}", sample.len(), out.display());
        }
        Command::Fit { sample, method, layers, width, common } => {
            let config = common.resolve(ExperimentConfig::single())?;
            let data = MarkedPointSample::read_dir(&sample)?;
            let shape = NetShape { n_layers: layers, width };
            let train = marked_ratio::estimators::TrainConfig { seed: config.base_seed, ..config.train };
            let model = fit(&data, method, shape, &train)?;
            let info =
                BundleInfo { shape, train, sample_seed: data.seed, horizon: data.horizon, model_id: data.model_id.clone() };
            model.write_bundle(&config.out_dir, info)?;
            println!("{} model with {} parameters written to {}", method.name(), model.parameter_count(), config.out_dir.display());
        }
        Command::Evaluate { bundle, model, seed, intervals, out } => {
            let (fitted, info) = FittedModel::read_bundle(&bundle)?;
            let truth = ModelChoice::from(model).build();
            if info.model_id != truth.id() {
                log::warn!("bundle was trained on `{}`, evaluating against `{}`", info.model_id, truth.id());
            }
            let fresh = simulate(&truth, info.horizon, seed.unwrap_or(info.sample_seed + EVAL_SEED_OFFSET))?;
            let grid = quantile_grid(&fresh.covariate_draws(), intervals)?;
            let eval = evaluate_fit(&fitted, &truth, &fresh, &grid)?;
            let text = serde_json::to_string_pretty(&eval)?;
            println!("{text}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                write_text(&dir.join("evaluation.json"), &text)?;
            }
        }
        Command::Single(common) => {
            let config = common.resolve(ExperimentConfig::single())?;
            let result = run_single_fit(&config)?;
            for r in &result.reports {
                println!("{} eps_l2 {:.5} eps_linf {:.5} risk {:.5}", r.method.name(), r.eps_l2, r.eps_linf, r.risk);
            }
        }
        Command::Convergence(common) => {
            let config = common.resolve(ExperimentConfig::default())?;
            info!("convergence study over {:?} with {} replications", config.horizons, config.replications);
            summarize(&run_convergence_study(&config)?);
        }
        Command::Robustness(common) => {
            let config = common.resolve(ExperimentConfig::robustness())?;
            summarize(&run_robustness_grid(&config)?);
        }
        Command::Bounds { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let input: BoundsInput = serde_json::from_str(&text)?;
            let report = bounds_report(&input)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
        }
        Command::LobFit { input, tick_size, synthetic, method, layers, width, common } => {
            let base = common.resolve(ExperimentConfig::single())?;
            let source = match synthetic {
                Some(horizon) => LobSource::Synthetic { horizon, seed: base.base_seed },
                None if input.is_empty() => bail!("give --input files or --synthetic"),
                None => LobSource::Files { paths: input, tick_size },
            };
            let config = LobFitConfig {
                source,
                methods: method,
                shape: NetShape { n_layers: layers, width },
                train: marked_ratio::estimators::TrainConfig { seed: base.base_seed, ..base.train },
                out_dir: base.out_dir,
            };
            let result = run_lob_fit(&config)?;
            println!("{} events fitted, {} records rejected", result.sample.len(), result.rejected);
            for (m, err) in &result.table_errors {
                println!("{} max table error {err:.4}", m.name());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
