//! `bidscreen`: coalition-based screening of procurement bids.
//!
//! Exit codes: 0 on success, 1 for bad input or configuration, 2 for
//! internal failures.

mod commands;
mod config;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bidscreen::learners::ModelKind;
use bidscreen::pipeline::ScreenSubset;
use bidscreen::StatisticSet;
use clap::{Args, Parser, Subcommand};

use crate::commands::SynthArgs;
use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "bidscreen", version, about = "Flag bid-rigging coalitions in procurement data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o', env = "BIDSCREEN_OUTPUT_DIR", global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "BIDSCREEN_WORKERS", global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct FeatureArgs {
    /// Aggregation statistics: base (36 features) or extended (90).
    #[arg(long)]
    stats: Option<StatisticSet>,
    /// Coalition size (3 or 4).
    #[arg(long)]
    k: Option<usize>,
    /// Minimum number of tenders the coalition must share.
    #[arg(long)]
    min_joint: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a bid CSV and print summary counts.
    Validate {
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Enumerate coalitions and write their screen features.
    Features {
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Run the repeated train/test protocol on a feature table.
    Evaluate {
        features: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// all, asymmetry-only, asymmetry-reduced, or a comma list of
        /// screens or columns.
        #[arg(long)]
        screens: Option<ScreenSubset>,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated algorithms.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<ModelKind>>,
        /// Also fit every algorithm on all labeled rows and save it.
        #[arg(long)]
        save_models: bool,
    },
    /// Generate a synthetic market as a bid CSV.
    Synth {
        #[arg(long, default_value = "default")]
        preset: String,
        /// TOML file of market parameters instead of a preset.
        #[arg(long, conflicts_with = "preset")]
        params: Option<PathBuf>,
        /// Output file (standard output when absent).
        #[arg(long)]
        output: Option<PathBuf>,
        /// List presets and exit.
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score an unlabeled feature table with a saved model.
    Score {
        features: PathBuf,
        #[arg(long, short = 'm')]
        model: PathBuf,
        /// Output file (standard output when absent).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve(common: &Common, input: Option<PathBuf>, extra: Overrides) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref())?.apply(Overrides {
        input,
        output_dir: common.out.clone(),
        seed: common.seed,
        workers: common.workers,
        ..extra
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { input, common } => commands::validate_cmd(&resolve(&common, input, Overrides::default())?),
        Command::Features { input, common, features } => {
            let o = Overrides { stats: features.stats, k: features.k, min_joint: features.min_joint, ..Overrides::default() };
            commands::features_cmd(&resolve(&common, input, o)?).map(|_| ())
        }
        Command::Evaluate { features, common, screens, reps, algorithms, save_models } => {
            let o = Overrides { screens, reps, algorithms, ..Overrides::default() };
            commands::evaluate_cmd(&resolve(&common, features, o)?, save_models)
        }
        Command::Synth { preset, params, output, list, common } => {
            let config = RunConfig::load(common.config.as_deref())?;
            let args = SynthArgs { preset, params, seed: common.seed, output, list };
            commands::synth_cmd(&args, &config.columns)
        }
        Command::Score { features, model, output } => commands::score_cmd(&features, &model, output.as_deref()),
    }
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
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
        Err(_) => ExitCode::from(2),
    }
}
