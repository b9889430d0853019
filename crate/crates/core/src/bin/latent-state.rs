use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use latent_state::data::fleet::{
    evaluate_fleet, forecast_fleet, load_or_simulate, quantile_rows, read_json, run_pipeline,
    train_fleet, write_json, FleetSummary,
};
use latent_state::data::series::{load_series, read_samples, write_quantiles, write_samples};
use latent_state::data::{save_series, simulate, RunConfig};
use latent_state::evaluation::EvaluationSpec;
use latent_state::training::TrainedModel;
use latent_state::{Error, Result};

/// Latent-state forecasting for intermittent count series.
///
/// The log level is read from `RUST_LOG` (default `info`).
#[derive(Debug, Parser)]
#[command(name = "latent-state", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per item and write `model.json` and `summary.json`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Series CSV; defaults to the `data` entry of the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw sample paths from trained models.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = latent_state::forecast::DEFAULT_NUM_PATHS)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV with features and calendar columns over the horizon.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Evaluation spec whose spans and quantiles go into `quantiles.csv`.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory; defaults to the directory of the model file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score sample paths against actual series.
    Evaluate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        actuals: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Metrics file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic series from the `simulation` entry of a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold out the last `horizon` steps, train, forecast and evaluate.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the `out` entry of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_spec(path: &Path) -> Result<EvaluationSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec: EvaluationSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn check(summary: &FleetSummary) -> Result<()> {
    for f in &summary.failures {
        error!("item {} failed: {}", f.item_id, f.error);
    }
    if summary.all_failed() {
        return Err(Error::AllItemsFailed(summary.n_items));
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, data, out } => {
            let mut config = RunConfig::load(&config)?;
            if data.is_some() {
                config.data = data;
            }
            let set = load_or_simulate(&config)?;
            std::fs::create_dir_all(&out)?;
            let trained = train_fleet(&set, &config)?;
            write_json(&trained.models, &out.join("model.json"))?;
            write_json(&trained.summary, &out.join("summary.json"))?;
            info!(
                "trained {} of {} items",
                trained.summary.n_succeeded, trained.summary.n_items
            );
            check(&trained.summary)
        }
        Command::Forecast {
            model,
            horizon,
            paths,
            seed,
            features,
            spec,
            out,
            threads,
        } => {
            if horizon == 0 || paths == 0 || threads == Some(0) {
                return Err(Error::Config(
                    "horizon, paths and threads must be positive".into(),
                ));
            }
            let spec = spec
                .as_deref()
                .map(load_spec)
                .transpose()?
                .unwrap_or_default();
            let models: BTreeMap<String, TrainedModel> = read_json(&model)?;
            let horizon_data = features.as_deref().map(load_series).transpose()?;
            let out =
                out.unwrap_or_else(|| model.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&out)?;
            let (samples, failures, timing) = forecast_fleet(
                &models,
                horizon_data.as_ref(),
                horizon,
                paths,
                seed,
                threads,
            )?;
            write_samples(
                samples.iter().map(|(k, v)| (k.as_str(), v)),
                create(&out.join("samples.csv"))?,
            )?;
            write_quantiles(
                &quantile_rows(&samples, &spec)?,
                create(&out.join("quantiles.csv"))?,
            )?;
            let summary = FleetSummary {
                n_items: models.len(),
                n_succeeded: samples.len(),
                n_failed: failures.len(),
                n_fallback: 0,
                failures,
                timings: timing.into_iter().collect(),
            };
            write_json(&summary, &out.join("forecast_summary.json"))?;
            check(&summary)
        }
        Command::Evaluate {
            samples,
            actuals,
            spec,
            out,
        } => {
            let spec = load_spec(&spec)?;
            let samples = read_samples(std::fs::File::open(&samples)?)?;
            let actuals = load_series(&actuals)?;
            let metrics = evaluate_fleet(&samples, &actuals, &spec)?;
            match out {
                Some(p) => write_json(&metrics, &p)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    serde_json::to_writer_pretty(&mut stdout, &metrics)?;
                    writeln!(stdout)?;
                }
            }
            Ok(())
        }
        Command::Simulate { config, seed, out } => {
            let config = RunConfig::load(&config)?;
            let Some(sim) = &config.simulation else {
                return Err(Error::Config("config has no simulation entry".into()));
            };
            let (set, truth) = simulate(sim, seed)?;
            std::fs::create_dir_all(&out)?;
            save_series(&set, &out.join("data.csv"))?;
            write_json(&truth, &out.join("truth.json"))?;
            info!("simulated {} items", set.items.len());
            Ok(())
        }
        Command::Pipeline { config, out } => {
            let config = RunConfig::load(&config)?;
            let Some(out) = out.or_else(|| config.out.clone()) else {
                return Err(Error::Config("pipeline needs an output directory".into()));
            };
            let set = load_or_simulate(&config)?;
            let summary = run_pipeline(&config, &set, &out)?;
            check(&summary)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
