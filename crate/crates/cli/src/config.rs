use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use siglab_core::control::ControllerKind;
use siglab_core::reasoner::{FailureMode, HttpConfig, ScoreGap};
use siglab_core::{BackendSpec, EpisodeOptions, Error, Result, TrainConfig};

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scenarios: Vec<String>,
    pub seeds: Vec<u64>,
    pub driver: ControllerKind,
    pub shuffle_seed: u64,
    pub duration: Option<u32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["balanced".into(), "directional_peak".into(), "fluctuating".into()],
            seeds: vec![101, 102],
            driver: ControllerKind::RuleBased,
            shuffle_seed: 0,
            duration: None,
        }
    }
}

/// Everything a command may read. Loaded from `--config`, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub duration: Option<u32>,
    pub data_dir: PathBuf,
    pub weights: PathBuf,
    /// Output directory; each command has its own default under `out/`.
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub ablation_scenario: String,
    pub episode: EpisodeOptions,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "balanced".into(),
            controller: ControllerKind::FixedTime,
            seed: 1,
            seeds: vec![1, 2, 3, 4, 5],
            duration: None,
            data_dir: PathBuf::from("out/data"),
            weights: PathBuf::from("out/model/weights.json"),
            out: None,
            jobs: 1,
            ablation_scenario: "sudden_surge".into(),
            episode: EpisodeOptions::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Parse a `--backend` value: `heuristic`, `http`, `faulty:<seconds>`, or `failing:<timeout|server-error|garbage>`.
///
/// `http` takes its endpoint from the environment, or keeps an HTTP backend already set in the config file.
pub fn parse_backend(value: &str, current: &BackendSpec) -> Result<BackendSpec> {
    let (name, arg) = value.split_once(':').map_or((value, None), |(n, a)| (n, Some(a)));
    match (name, arg) {
        ("heuristic", None) => Ok(BackendSpec::Heuristic),
        ("http", None) => match (HttpConfig::from_env(), current) {
            (Some(cfg), _) => Ok(BackendSpec::Http(cfg)),
            (None, BackendSpec::Http(cfg)) => Ok(BackendSpec::Http(cfg.clone())),
            (None, _) => Err(Error::Config("http backend needs SIGLAB_REASONER_URL".into())),
        },
        ("faulty", Some(d)) => d
            .parse()
            .map(|duration| BackendSpec::Faulty { duration })
            .map_err(|_| Error::Config(format!("bad faulty duration {d:?}"))),
        ("failing", Some(mode)) => {
            let mode = match mode {
                "timeout" => FailureMode::Timeout,
                "server-error" => FailureMode::ServerError,
                "garbage" => FailureMode::Garbage,
                other => return Err(Error::Config(format!("unknown failure mode {other:?}"))),
            };
            Ok(BackendSpec::Failing { mode })
        }
        _ => Err(Error::Config(format!("unknown backend {value:?}"))),
    }
}

/// Trigger threshold flags shared by the simulation commands.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ThresholdArgs {
    /// Queue growth between snapshots that triggers the reasoner, vehicles [default: 5]
    #[arg(long, value_name = "VEH")]
    pub tau_q: Option<f64>,
    /// Waiting-time growth between snapshots that triggers the reasoner, seconds [default: 60]
    #[arg(long, value_name = "SECONDS")]
    pub tau_w: Option<f64>,
    /// Top-two demand score gap, as a fraction of the top score, below which the reasoner is triggered [default: 0.1]
    #[arg(long, value_name = "FRACTION")]
    pub tau_d: Option<f64>,
}

impl ThresholdArgs {
    pub fn apply(&self, opts: &mut EpisodeOptions) {
        if let Some(q) = self.tau_q {
            opts.thresholds.tau_q = q;
        }
        if let Some(w) = self.tau_w {
            opts.thresholds.tau_w = w;
        }
        if let Some(d) = self.tau_d {
            opts.thresholds.tau_d = ScoreGap::FractionOfTop(d);
        }
    }
}
