//! `headimpact`: benchmark generation, training sweeps and detection.
//!
//! Every subcommand prints a JSON summary on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit with
//! status 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use headimpact_core::dataset::{load_field_dataset, write_dataset, Label, Strategy, StrategySpec};
use headimpact_core::experiment::{
    self, emit_figures_data, generate_benchmark, load_results, prepare, run_cell, run_with_data, simulate_pool,
    ExperimentConfig, ResultsBundle, LABELS_FILE,
};
use headimpact_core::nnet::{evaluate, Model, Samples};
use headimpact_core::{Error, Result};

#[derive(Parser)]
#[command(name = "headimpact", version, about = "Physics-informed head impact detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the benchmark seed and the training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for `detect`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cells trained concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Simulate the synthetic sweep into an event directory.
    Simulate,
    /// Generate the labelled desk benchmark.
    Benchmark,
    /// Train one strategy and save the model.
    Train {
        /// Strategy name, e.g. `field_only_unaugmented`, `synth100_balanced`
        /// or `pretrain`.
        #[arg(long, default_value = "synth100_balanced")]
        strategy: String,
    },
    /// Evaluate a saved model on a labelled event directory.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Labels file; defaults to `labels.csv` inside the data directory.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Run the strategy sweep and write the figure tables.
    Sweep {
        /// Add the published reference points to the NPV/PPV tables.
        #[arg(long)]
        reference: bool,
    },
    /// Classify every event file in a directory.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
    },
    /// Rebuild the figure tables of a finished sweep.
    Report {
        /// Run directory written by `sweep`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        reference: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.benchmark.seed = seed;
        config.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(jobs) = common.jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok(config)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn figures_summary(bundle: &ResultsBundle, dir: &Path, reference: bool) -> Result<serde_json::Value> {
    let written = emit_figures_data(bundle, dir, reference)?;
    let strategies: Vec<serde_json::Value> = bundle
        .manifest
        .config
        .planned_specs()
        .iter()
        .map(|(spec, _)| {
            let name = spec.name();
            json!({
                "strategy": name,
                "npv": bundle.median(&name, |m| m.npv),
                "ppv": bundle.median(&name, |m| m.ppv),
                "f1": bundle.median(&name, |m| m.f1),
                "f2": bundle.median(&name, |m| m.f2),
            })
        })
        .collect();
    Ok(json!({ "figures": written, "median_test_metrics": strategies }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let common = &cli.common;
    match cli.command {
        Command::Config => {
            let config = load_config(common)?;
            print!("{}", config.to_toml()?);
            Ok(serde_json::Value::Null)
        }
        Command::Simulate => {
            let config = load_config(common)?;
            let dir = common.out.clone().unwrap_or_else(|| config.out_dir.join("synthetic"));
            let pool = simulate_pool(&config.synthetic)?;
            write_dataset(&dir, &pool.events, LABELS_FILE)?;
            let configs: Vec<_> = pool
                .events
                .iter()
                .zip(&pool.configs)
                .map(|(e, c)| json!({ "id": e.id, "config": c }))
                .collect();
            write_json(&dir.join("sweep.json"), &json!({ "sweep": config.synthetic.sweep, "events": configs }))?;
            Ok(json!({
                "dir": dir,
                "events": pool.events.len(),
                "below_trigger": pool.below_trigger,
            }))
        }
        Command::Benchmark => {
            let config = load_config(common)?;
            let dir = common.out.clone().unwrap_or_else(|| config.out_dir.join("benchmark"));
            let sources = generate_benchmark(&config.benchmark, &dir)?;
            Ok(json!({
                "dir": dir,
                "n_true": sources.n_true,
                "n_false": sources.n_false,
                "families": sources.family_counts,
                "digest": experiment::directory_digest(&dir)?,
            }))
        }
        Command::Train { strategy } => {
            let mut config = load_config(common)?;
            let spec: StrategySpec = strategy.parse()?;
            let fraction = match spec.strategy {
                Strategy::Pretrain => None,
                s => Some(s.synthetic_percent()),
            };
            // Restrict the plan to this one strategy so `prepare` only
            // simulates what it needs.
            config.sweep.settings = vec![spec.setting];
            config.sweep.fractions = fraction.into_iter().collect();
            config.sweep.pretrain = fraction.is_none();
            config.sweep.only.clear();
            let seed = config.seeds[0];
            let data = prepare(&config)?;
            let (model, result) = run_cell(&data, &config, spec, fraction, seed)?;
            let model_path = config.out_dir.join("model.json");
            let manifest = json!({ "config_digest": config.digest()?, "cell": result.cell, "seed": seed });
            model.save(&model_path, Some(manifest.to_string()))?;
            write_json(&config.out_dir.join("train_report.json"), &serde_json::to_value(&result)?)?;
            info!("model written to {}", model_path.display());
            Ok(json!({ "model": model_path, "result": result }))
        }
        Command::Evaluate { model, data, labels } => {
            let config = load_config(common)?;
            let model = Model::load(&model, Some(&config.train.architecture))?;
            let labels = labels.unwrap_or_else(|| data.join(LABELS_FILE));
            let events = load_field_dataset(&data, &labels)?;
            let report = evaluate(&model, &Samples::from_events(&events))?;
            let value = serde_json::to_value(report)?;
            if let Some(out) = &common.out {
                write_json(out, &value)?;
            }
            Ok(value)
        }
        Command::Sweep { reference } => {
            let config = load_config(common)?;
            let data = prepare(&config)?;
            let bundle = run_with_data(&config, &data)?;
            figures_summary(&bundle, &config.out_dir.join("figures"), reference)
        }
        Command::Detect { model, events } => {
            let config = load_config(common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("predictions.csv"));
            let summary = experiment::detect(&model, &events, &out, Some(&config.train.architecture))?;
            let n_true = summary.predictions.iter().filter(|p| p.label == Label::TrueImpact).count();
            match summary.events_per_hour {
                Some(r) => eprintln!("{} events in {:.3} s: {r:.3e} events/hour", summary.n_events, summary.seconds),
                None => eprintln!("no events processed"),
            }
            Ok(json!({
                "predictions": out,
                "events": summary.n_events,
                "predicted_true": n_true,
                "seconds": summary.seconds,
                "events_per_hour": summary.events_per_hour,
            }))
        }
        Command::Report { run, reference } => {
            let bundle = load_results(&run)?;
            let dir = common.out.clone().unwrap_or_else(|| run.join("figures"));
            figures_summary(&bundle, &dir, reference)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let err = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
