//! `cnl`: train, evaluate and probe causal neighbourhood learning models.

mod commands;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cnl_core::train::config_help;

#[derive(Debug, Parser)]
#[command(name = "cnl", version, about = "Causal neighbourhood learning for node classification")]
#[command(after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file: `key=value` lines with `#` comments, or a flat JSON object.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable and applied after `--config`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = "cnl-out")]
    pub out: PathBuf,
    /// Root seed; overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fold-level worker threads; overrides the `threads` key.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    pub log_level: LogLevel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Debug, Args)]
pub struct BundleArg {
    /// Graph bundle directory.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Read `--bundle` as a raw MUSAE directory instead of a bundle.
    #[arg(long)]
    pub musae: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a bundle and print its size.
    Validate {
        #[command(flatten)]
        input: BundleArg,
    },
    /// Write a synthetic train/test bundle pair with a shifted spurious block.
    Synth {
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 0.9)]
        spurious_train_corr: f64,
        #[arg(long, default_value_t = 0.1)]
        spurious_test_corr: f64,
    },
    /// Train on a holdout split and save the checkpoint.
    Train {
        #[command(flatten)]
        input: BundleArg,
        /// Also write `edge_scores.csv` for the trained model.
        #[arg(long)]
        dump_edge_scores: bool,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[command(flatten)]
        input: BundleArg,
    },
    /// Cross-validate the full model and each ablated variant.
    Ablate {
        #[command(flatten)]
        input: BundleArg,
        /// Comma-separated variants; join components with `+`.
        #[arg(long, value_delimiter = ',', default_value = "cng,eim,group,eim+group")]
        variants: Vec<String>,
    },
    /// Cross-validate over a range of edge drop rates.
    Sweep {
        #[command(flatten)]
        input: BundleArg,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.15,0.2,0.25,0.3")]
        taus: Vec<f64>,
    },
    /// Train on one bundle and evaluate on shifted domains.
    Shift {
        #[command(flatten)]
        input: BundleArg,
        /// Test domain as `NAME=PATH`; repeatable.
        #[arg(long = "domain", value_name = "NAME=PATH", required = true)]
        domains: Vec<String>,
    },
    /// Score every edge of a bundle with a saved checkpoint.
    DumpScores {
        #[command(flatten)]
        input: BundleArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn init_logging(level: LogLevel) {
    let filter = match level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.common.log_level);
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
