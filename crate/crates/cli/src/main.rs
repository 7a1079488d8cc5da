mod config;
mod report;
mod stages;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mcd_telemetry::dataio::is_excluded;
use rayon::prelude::*;

use config::{ChannelSelection, RunConfig, DATA_ENV};
use report::{ChannelOutcome, Outcome, RESOLVED_CONFIG};
use stages::{resolve_channels, Pipeline, Stage};

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Telemetry anomaly detection with a Monte Carlo dropout LSTM forecaster.
#[derive(Debug, Parser)]
#[command(name = "mcd-telemetry", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dataset root (falls back to the config file, then $MCD_TELEMETRY_DATA).
    #[arg(long, global = true)]
    dataset_dir: Option<PathBuf>,

    #[arg(long, short, global = true)]
    output_dir: Option<PathBuf>,

    /// `all` or a comma-separated list of channel ids.
    #[arg(long, global = true)]
    channels: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Monte Carlo passes.
    #[arg(long, global = true)]
    passes: Option<usize>,

    #[arg(long, global = true)]
    p_drop: Option<f64>,

    #[arg(long, global = true)]
    z_mult: Option<f64>,

    #[arg(long, global = true)]
    max_delay: Option<usize>,

    /// Window length for `detect`.
    #[arg(long, global = true)]
    n_max: Option<usize>,

    /// Channel worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Leave the test split unsmoothed.
    #[arg(long, global = true)]
    no_smooth_test: bool,

    /// -v for progress, -vv for per-epoch losses.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize and smooth the train and test splits.
    Preprocess,
    /// Fit one forecaster per channel.
    Train,
    /// Monte Carlo forecasts with confidence bounds over the test split.
    Infer,
    /// Flag anomalies with the configured window length.
    Detect,
    /// Score detections against the labels and write the report.
    Evaluate,
    /// Grid-search the window length and detect with the best one.
    Sweep,
    /// preprocess, train, infer, sweep and evaluate.
    Run,
    /// Plot-ready bounds and sweep tables for a finished run.
    Plotdata {
        /// Run directory (defaults to the output directory).
        run_dir: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset_dir {
            cfg.dataset_dir = Some(d.clone());
        } else if cfg.dataset_dir.is_none() {
            cfg.dataset_dir = std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(c) = &self.channels {
            cfg.channels = ChannelSelection::parse(c);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.trainer.epochs = v;
        }
        if let Some(v) = self.passes {
            cfg.mc_passes = v;
        }
        if let Some(v) = self.p_drop {
            cfg.p_drop = v;
        }
        if let Some(v) = self.z_mult {
            cfg.z_mult = v;
        }
        if let Some(v) = self.max_delay {
            cfg.max_delay = v;
        }
        if let Some(v) = self.n_max {
            cfg.detector.n_max = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if self.no_smooth_test {
            cfg.smooth_test = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stages_for(cmd: &Command) -> &'static [Stage] {
    match cmd {
        Command::Preprocess => &[Stage::Preprocess],
        Command::Train => &[Stage::Train],
        Command::Infer => &[Stage::Infer],
        Command::Detect => &[Stage::Detect],
        Command::Evaluate => &[Stage::Evaluate],
        Command::Sweep => &[Stage::Sweep],
        Command::Run => &[Stage::Preprocess, Stage::Train, Stage::Infer, Stage::Sweep, Stage::Evaluate],
        Command::Plotdata { .. } | Command::ShowConfig => &[],
    }
}

fn process(pipeline: &Pipeline, channel: &str, stages: &[Stage]) -> ChannelOutcome {
    let outcome = if is_excluded(channel, &pipeline.cfg.exclusions) {
        log::info!("{channel}: excluded");
        Outcome::Excluded
    } else {
        let mut evaluation = None;
        let mut failure = None;
        for &stage in stages {
            log::info!("{channel}: {}", stage.name());
            let result = catch_unwind(AssertUnwindSafe(|| -> Result<()> {
                if stage == Stage::Evaluate {
                    evaluation = Some(pipeline.evaluate(channel)?);
                    Ok(())
                } else {
                    pipeline.run_stage(stage, channel)
                }
            }))
            .unwrap_or_else(|_| Err(anyhow::anyhow!("internal error (panic)")));
            if let Err(e) = result {
                log::error!("{channel}: {} failed: {e:#}", stage.name());
                failure = Some(Outcome::Failed {
                    stage,
                    message: format!("{e:#}"),
                });
                break;
            }
        }
        failure.unwrap_or(Outcome::Done(evaluation))
    };
    ChannelOutcome {
        channel: channel.to_string(),
        outcome,
    }
}

fn execute(cfg: &RunConfig, stages: &[Stage]) -> Result<Vec<ChannelOutcome>> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    fs::write(cfg.output_dir.join(RESOLVED_CONFIG), cfg.to_toml()?)
        .with_context(|| format!("writing {RESOLVED_CONFIG}"))?;
    if stages.contains(&Stage::Preprocess) {
        cfg.dataset_dir()?;
    }
    let pipeline = Pipeline::new(cfg)?;
    let channels = resolve_channels(cfg)?;
    if channels.is_empty() {
        log::warn!("no channels selected; nothing to do");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let outcomes: Vec<ChannelOutcome> =
        pool.install(|| channels.par_iter().map(|ch| process(&pipeline, ch, stages)).collect());
    report::write_error_manifest(&cfg.output_dir, &outcomes)?;
    if stages.contains(&Stage::Evaluate) {
        report::write_report(&cfg.output_dir, &outcomes)?;
    }
    Ok(outcomes)
}

fn run(cli: &Cli) -> Result<Vec<ChannelOutcome>> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(Vec::new())
        }
        Command::Plotdata { run_dir } => {
            let dir = run_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let outcomes = report::plotdata(&dir)?;
            report::write_error_manifest(&dir, &outcomes)?;
            Ok(outcomes)
        }
        cmd => execute(&cfg, stages_for(cmd)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").init();

    match run(&cli) {
        Ok(outcomes) => {
            let failed: Vec<_> = outcomes.iter().filter(|o| o.failed()).collect();
            for o in &failed {
                if let Outcome::Failed { stage, message } = &o.outcome {
                    eprintln!("{}: {} failed: {message}", o.channel, stage.name());
                }
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} of {} channels failed", failed.len(), outcomes.len());
                ExitCode::from(EXIT_PARTIAL)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
