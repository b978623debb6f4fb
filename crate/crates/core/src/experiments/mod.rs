//! Scenario × controller × seed matrix, ablation variants, and their summaries.

mod metrics;
pub mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControllerKind;
use crate::episode::{run_episode, EpisodeOptions, RunLog};
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::sim::{build_scenario, EVALUATION_SCENARIOS};

pub use metrics::{accumulate, MetricsReport, CO2_G_PER_STOP, CO2_IDLE_G_PER_S, CO2_MOVING_G_PER_S};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoLlm,
    NoFilter,
    NoPrediction,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] =
        [AblationVariant::Full, AblationVariant::NoLlm, AblationVariant::NoFilter, AblationVariant::NoPrediction];

    pub fn id(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoLlm => "no_llm",
            AblationVariant::NoFilter => "no_filter",
            AblationVariant::NoPrediction => "no_prediction",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Full => "Full Model",
            AblationVariant::NoLlm => "Without LLM",
            AblationVariant::NoFilter => "Without Safety Filter",
            AblationVariant::NoPrediction => "Without Prediction",
        }
    }

    /// Controller and options this variant runs with.
    pub fn configure(self, base: &EpisodeOptions) -> (ControllerKind, EpisodeOptions) {
        let mut opts = base.clone();
        let kind = match self {
            AblationVariant::Full => ControllerKind::LlmAugmented,
            AblationVariant::NoLlm => ControllerKind::LstmPredictive,
            AblationVariant::NoFilter => {
                opts.safety_filter = false;
                ControllerKind::LlmAugmented
            }
            AblationVariant::NoPrediction => {
                opts.context_prediction = false;
                ControllerKind::LlmAugmented
            }
        };
        (kind, opts)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub scenarios: Vec<String>,
    pub controllers: Vec<ControllerKind>,
    pub seeds: Vec<u64>,
    pub ablations: Vec<AblationVariant>,
    pub ablation_scenario: String,
    /// Overrides each scenario's duration when set.
    pub duration: Option<u32>,
    pub options: EpisodeOptions,
    pub jobs: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            scenarios: EVALUATION_SCENARIOS.iter().map(|s| s.to_string()).collect(),
            controllers: ControllerKind::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            ablations: AblationVariant::ALL.to_vec(),
            ablation_scenario: "sudden_surge".into(),
            duration: None,
            options: EpisodeOptions::default(),
            jobs: 1,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("plan has no seeds".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config(format!("plan seeds must be distinct, got {:?}", self.seeds)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.duration == Some(0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        for s in self.scenarios.iter().chain(std::iter::once(&self.ablation_scenario)) {
            build_scenario(s)?;
        }
        self.options.validate()
    }

    pub fn needs_predictor(&self) -> bool {
        self.controllers.iter().any(|c| c.needs_predictor())
    }
}

/// One simulated cell. `method` is a controller id in the matrix and a variant id in ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: String,
    pub method: String,
    pub label: String,
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub label: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn from_cells(cells: Vec<CellResult>) -> Self {
        let summary = summarize(&cells);
        ExperimentResult { cells, summary }
    }

    pub fn row(&self, scenario: &str, method: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.scenario == scenario && r.method == method)
    }

    pub fn cell(&self, scenario: &str, method: &str, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.scenario == scenario && c.method == method && c.seed == seed)
    }
}

/// Pool cells per (scenario, method), in order of first appearance.
pub fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for c in cells {
        let key = (c.scenario.as_str(), c.method.as_str(), c.label.as_str());
        if !keys.iter().any(|k| k.0 == key.0 && k.1 == key.1) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scenario, method, label)| {
            let group: Vec<MetricsReport> = cells
                .iter()
                .filter(|c| c.scenario == scenario && c.method == method)
                .map(|c| c.metrics.clone())
                .collect();
            SummaryRow {
                scenario: scenario.into(),
                method: method.into(),
                label: label.into(),
                metrics: MetricsReport::pool(&group),
            }
        })
        .collect()
}

struct Job {
    scenario: String,
    seed: u64,
    kind: ControllerKind,
    method: &'static str,
    label: &'static str,
    opts: EpisodeOptions,
}

/// Run one cell and keep its log.
pub fn run_cell(
    scenario: &str,
    seed: u64,
    duration: Option<u32>,
    kind: ControllerKind,
    opts: &EpisodeOptions,
    predictor: Option<&Predictor>,
) -> Result<(RunLog, MetricsReport)> {
    let mut cfg = build_scenario(scenario)?.with_seed(seed);
    if let Some(d) = duration {
        cfg = cfg.with_duration(d);
    }
    let log = run_episode(&cfg, kind, opts, predictor)?;
    let metrics = accumulate(&log)?;
    Ok((log, metrics))
}

fn execute(jobs: Vec<Job>, duration: Option<u32>, threads: usize, predictor: Option<&Predictor>) -> Result<Vec<CellResult>> {
    let run = |j: &Job| -> Result<CellResult> {
        let (_, metrics) = run_cell(&j.scenario, j.seed, duration, j.kind, &j.opts, predictor)?;
        Ok(CellResult { scenario: j.scenario.clone(), method: j.method.into(), label: j.label.into(), seed: j.seed, metrics })
    };
    if threads <= 1 {
        return jobs.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

fn require_predictor(needed: bool, predictor: Option<&Predictor>) -> Result<()> {
    if needed && predictor.is_none() {
        return Err(Error::Config("predictive controllers need trained predictor weights".into()));
    }
    Ok(())
}

/// Every (scenario, controller, seed) cell, then the seed-pooled rows.
pub fn run_matrix(plan: &ExperimentPlan, predictor: Option<&Predictor>) -> Result<ExperimentResult> {
    plan.validate()?;
    require_predictor(plan.needs_predictor(), predictor)?;
    let mut jobs = Vec::new();
    for scenario in &plan.scenarios {
        for &kind in &plan.controllers {
            for &seed in &plan.seeds {
                jobs.push(Job {
                    scenario: scenario.clone(),
                    seed,
                    kind,
                    method: kind.id(),
                    label: kind.label(),
                    opts: plan.options.clone(),
                });
            }
        }
    }
    Ok(ExperimentResult::from_cells(execute(jobs, plan.duration, plan.jobs, predictor)?))
}

/// The plan's ablation variants on its ablation scenario.
pub fn run_ablation(plan: &ExperimentPlan, predictor: Option<&Predictor>) -> Result<ExperimentResult> {
    plan.validate()?;
    if plan.ablations.is_empty() {
        return Err(Error::Config("plan lists no ablation variants".into()));
    }
    require_predictor(true, predictor)?;
    let mut jobs = Vec::new();
    for &variant in &plan.ablations {
        let (kind, opts) = variant.configure(&plan.options);
        for &seed in &plan.seeds {
            jobs.push(Job {
                scenario: plan.ablation_scenario.clone(),
                seed,
                kind,
                method: variant.id(),
                label: variant.label(),
                opts: opts.clone(),
            });
        }
    }
    Ok(ExperimentResult::from_cells(execute(jobs, plan.duration, plan.jobs, predictor)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_plan() -> ExperimentPlan {
        ExperimentPlan {
            controllers: vec![ControllerKind::FixedTime, ControllerKind::RuleBased],
            seeds: vec![1, 2],
            duration: Some(300),
            ..Default::default()
        }
    }

    #[test]
    fn matrix_shape_and_order() {
        let r = run_matrix(&short_plan(), None).unwrap();
        assert_eq!(r.cells.len(), 3 * 2 * 2);
        assert_eq!(r.summary.len(), 6);
        assert_eq!(r.summary[0].scenario, "balanced");
        assert_eq!(r.summary[0].method, "fixed_time");
        assert_eq!(r.summary[1].method, "rule_based");
        assert_eq!(r.summary[0].metrics.runs, 2);
    }

    #[test]
    fn parallel_matches_serial() {
        let serial = run_matrix(&short_plan(), None).unwrap();
        let parallel = run_matrix(&ExperimentPlan { jobs: 3, ..short_plan() }, None).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn plan_rejects_duplicate_seeds_and_missing_weights() {
        let dup = ExperimentPlan { seeds: vec![1, 1], ..short_plan() };
        assert_eq!(dup.validate().unwrap_err().class(), "config");
        let predictive = ExperimentPlan { controllers: vec![ControllerKind::LstmPredictive], ..short_plan() };
        assert_eq!(run_matrix(&predictive, None).unwrap_err().class(), "config");
        assert_eq!(run_ablation(&short_plan(), None).unwrap_err().class(), "config");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.id().parse::<AblationVariant>().unwrap(), v);
        }
        let (kind, opts) = AblationVariant::NoFilter.configure(&EpisodeOptions::default());
        assert_eq!(kind, ControllerKind::LlmAugmented);
        assert!(!opts.safety_filter);
        let (kind, _) = AblationVariant::NoLlm.configure(&EpisodeOptions::default());
        assert_eq!(kind, ControllerKind::LstmPredictive);
    }
}
