use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepfactor::commands;
use deepfactor::config::{self, BacktestConfig, FactorsConfig, ReportConfig, SimulateConfig};

/// Deep factor models for equity return prediction.
#[derive(Debug, Parser)]
#[command(name = "deepfactor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Only print errors.
    #[arg(long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Print debug progress.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON config for the command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulation benchmark on synthetic latent-factor panels.
    Simulate(RunArgs),
    /// Out-of-sample backtest on a monthly predictor panel.
    Backtest(RunArgs),
    /// Latent factors of a deep model fitted on a monthly panel.
    Factors(RunArgs),
    /// Evaluation tables and Diebold-Mariano tests from forecast files.
    Report(RunArgs),
}

fn run(cli: &Cli) -> deepfactor::Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Simulate(a) => {
            let mut cfg: SimulateConfig = config::load(&a.config)?;
            if a.seed.is_some() {
                cfg.seed = a.seed;
            }
            commands::cmd_simulate(&cfg, &a.out)
        }
        Command::Backtest(a) => {
            let mut cfg: BacktestConfig = config::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let data = config::resolve(&a.config, &cfg.data);
            commands::cmd_backtest(&cfg, &data, &a.out)
        }
        Command::Factors(a) => {
            let mut cfg: FactorsConfig = config::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let data = config::resolve(&a.config, &cfg.data);
            commands::cmd_factors(&cfg, &data, &a.out)
        }
        Command::Report(a) => {
            let cfg: ReportConfig = config::load(&a.config)?;
            let files: Vec<PathBuf> = cfg.forecasts.iter().map(|p| config::resolve(&a.config, p)).collect();
            commands::cmd_report(&cfg, &files, &a.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", display(&f));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
