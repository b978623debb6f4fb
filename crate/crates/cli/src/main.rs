//! `siglab`: generate data, train the forecaster, run controllers and experiments, emit reports.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ThresholdArgs;

#[derive(Debug, Parser)]
#[command(name = "siglab", version, about = "Intersection signal-control laboratory")]
struct Cli {
    /// JSON config file; flags given on the command line override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the training scenarios and write a windowed, split dataset
    GenData(GenDataArgs),
    /// Train the LSTM forecaster on a generated dataset
    Train(TrainArgs),
    /// Run one controller on one scenario and seed
    Run(RunArgs),
    /// Run the scenario x controller x seed matrix and write the comparison tables
    Experiment(ExperimentArgs),
    /// Run the ablation variants on one scenario and write the ablation table
    Ablate(AblateArgs),
    /// Rebuild the CSV tables of an experiment or ablation directory from its per-run files
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    /// Output directory [default: out/data]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Shuffle seed for the train/validation/test split [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated scenarios to simulate [default: balanced,directional_peak,fluctuating]
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pub scenarios: Option<Vec<String>>,
    /// Comma-separated simulation seeds [default: 101,102]
    #[arg(long, value_delimiter = ',', value_name = "SEEDS")]
    pub sim_seeds: Option<Vec<u64>>,
    /// Simulated seconds per run [default: scenario duration, 3600]
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<u32>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data [default: out/data]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Weights file to write [default: out/model/weights.json]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Training epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Hidden units per LSTM layer [default: 64]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Initialization and batch-order seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Scenario: balanced, directional_peak, sudden_surge or fluctuating [default: balanced]
    #[arg(long)]
    pub scenario: Option<String>,
    /// Controller: fixed_time, rule_based, lstm_predictive or llm_augmented [default: fixed_time]
    #[arg(long)]
    pub controller: Option<String>,
    /// Arrival seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds [default: scenario duration, 3600]
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<u32>,
    /// Predictor weights for the predictive controllers [default: out/model/weights.json]
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Reasoner backend: heuristic, http, faulty:<seconds> or failing:<timeout|server-error|garbage> [default: heuristic]
    #[arg(long, value_name = "BACKEND")]
    pub backend: Option<String>,
    /// Execute schema-valid recommendations without the safety filter
    #[arg(long)]
    pub no_filter: bool,
    /// Give the reasoner the current state instead of the forecast
    #[arg(long)]
    pub no_prediction: bool,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Output directory [default: out/run/<scenario>_<controller>_s<seed>]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ExperimentArgs {
    /// Comma-separated scenarios [default: balanced,directional_peak,sudden_surge]
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pub scenarios: Option<Vec<String>>,
    /// Comma-separated controllers [default: all four]
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pub controllers: Option<Vec<String>>,
    /// Comma-separated distinct seeds [default: 1,2,3,4,5]
    #[arg(long, value_delimiter = ',', value_name = "SEEDS")]
    pub seeds: Option<Vec<u64>>,
    /// Simulated seconds per run [default: scenario duration, 3600]
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<u32>,
    /// Predictor weights [default: out/model/weights.json]
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Reasoner backend, as for `run` [default: heuristic]
    #[arg(long, value_name = "BACKEND")]
    pub backend: Option<String>,
    /// Worker threads for independent runs [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Output directory [default: out/experiment]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    /// Scenario to ablate on [default: sudden_surge]
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated variants: full, no_llm, no_filter, no_prediction [default: all four]
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pub variants: Option<Vec<String>>,
    /// Comma-separated distinct seeds [default: 1,2,3,4,5]
    #[arg(long, value_delimiter = ',', value_name = "SEEDS")]
    pub seeds: Option<Vec<u64>>,
    /// Simulated seconds per run [default: scenario duration, 3600]
    #[arg(long, value_name = "SECONDS")]
    pub duration: Option<u32>,
    /// Predictor weights [default: out/model/weights.json]
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Reasoner backend, as for `run` [default: heuristic]
    #[arg(long, value_name = "BACKEND")]
    pub backend: Option<String>,
    /// Worker threads for independent runs [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Output directory [default: out/ablation]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Directory written by `experiment` or `ablate`
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage] {first}");
            return ExitCode::from(2);
        }
    };
    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::GenData(a) => commands::gen_data(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Run(a) => commands::run(cfg, a),
        Command::Experiment(a) => commands::experiment(cfg, a),
        Command::Ablate(a) => commands::ablate(cfg, a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}] {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
