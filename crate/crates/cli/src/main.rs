mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use seaspeed_core::clustering::ClusterName;
use seaspeed_core::eval::ModelKind;

use crate::config::PipelineConfig;

/// Voyage efficiency scoring and speed-profile optimization.
#[derive(Debug, Parser)]
#[command(name = "seaspeed", version)]
struct Cli {
    /// JSON config; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the data directory.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Print the default config as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic track, weather grids and ground truth.
    Synth,
    /// Parse, resample, split into voyages and label the raw track.
    Ingest,
    /// Attach weather to the ingested voyages.
    Fuse,
    /// Fit the fuel model on the training split.
    Calibrate,
    /// Voyage totals, Eff-Scores and corpus statistics.
    Score,
    /// Build the percentile clusters of the training split.
    Cluster,
    /// Train one model on one cluster.
    Train { model: ModelKind, cluster: ClusterName },
    /// Optimize the test voyages with a trained model.
    Optimize { model: ModelKind, cluster: ClusterName },
    /// Run every model on every cluster and write the reports.
    Evaluate,
    /// Rebuild the tables and gain plots from an earlier evaluation.
    Report,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();

    if cli.print_default_config {
        print!("{}", PipelineConfig::default().to_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("{}", Cli::command().render_usage());
        return ExitCode::from(EXIT_USAGE);
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.into()).build_global() {
        log::error!("cannot start worker pool: {e}");
        return ExitCode::from(EXIT_DATA);
    }
    match load_config(cli.config, cli.seed, cli.data, cli.out).and_then(|cfg| run(command, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn load_config(
    path: Option<PathBuf>,
    seed: Option<u64>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(&p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = data {
        cfg.paths.data_dir = d;
    }
    if let Some(o) = out {
        cfg.paths.out_dir = o;
    }
    cfg.resolve()
}

fn run(command: Command, cfg: &PipelineConfig) -> anyhow::Result<()> {
    match command {
        Command::Synth => commands::synth(cfg),
        Command::Ingest => commands::ingest(cfg),
        Command::Fuse => commands::fuse(cfg),
        Command::Calibrate => commands::calibrate(cfg),
        Command::Score => commands::score(cfg),
        Command::Cluster => commands::cluster(cfg),
        Command::Train { model, cluster } => commands::train(cfg, model, cluster),
        Command::Optimize { model, cluster } => commands::optimize(cfg, model, cluster),
        Command::Evaluate => commands::evaluate(cfg),
        Command::Report => commands::report(cfg),
    }
}
