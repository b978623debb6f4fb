use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use siglab_core::control::ControllerKind;
use siglab_core::experiments::report::{
    write_ablation_table, write_improvement_table, write_long_csv, write_matrix_csv, write_overall_table,
    write_reasoner_table,
};
use siglab_core::experiments::{run_cell, summarize, CellResult};
use siglab_core::predictor::{fit, generate_dataset, load_weights, save_weights, Dataset, WeightsMetadata};
use siglab_core::{
    build_scenario, jsonl, run_ablation, run_matrix, AblationVariant, Error, ExperimentPlan, Predictor, Result,
};

use crate::config::{parse_backend, RunConfig};
use crate::manifest::write_manifest;
use crate::{AblateArgs, ExperimentArgs, GenDataArgs, ReportArgs, RunArgs, TrainArgs};

pub const DATASET_FILE: &str = "dataset.json";
const DEFAULT_EPOCHS: usize = 100;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn load_predictor(path: &Path) -> Result<Predictor> {
    load_weights(path).map(|(p, _)| p)
}

pub fn gen_data(mut cfg: RunConfig, a: GenDataArgs) -> Result<()> {
    if let Some(v) = a.seed {
        cfg.dataset.shuffle_seed = v;
    }
    if let Some(v) = a.scenarios {
        cfg.dataset.scenarios = v;
    }
    if let Some(v) = a.sim_seeds {
        cfg.dataset.seeds = v;
    }
    if a.duration.is_some() {
        cfg.dataset.duration = a.duration;
    }
    let out = a.out.unwrap_or_else(|| cfg.data_dir.clone());
    let d = &cfg.dataset;
    let scenarios = d
        .scenarios
        .iter()
        .map(|s| Ok(match d.duration {
            Some(t) => build_scenario(s)?.with_duration(t),
            None => build_scenario(s)?,
        }))
        .collect::<Result<Vec<_>>>()?;
    let ds = generate_dataset(&scenarios, d.driver, &d.seeds, cfg.train.history, cfg.train.horizon, cfg.train.split, d.shuffle_seed)?;
    create_dir(&out)?;
    serde_json::to_writer(BufWriter::new(File::create(out.join(DATASET_FILE))?), &ds)?;

    #[derive(Serialize)]
    struct SplitSummary<'a> {
        samples: usize,
        train: usize,
        validation: usize,
        test: usize,
        fractions: [f64; 3],
        history: usize,
        horizon: usize,
        runs: &'a [siglab_core::predictor::Provenance],
    }
    write_json(
        &out.join("split.json"),
        &SplitSummary {
            samples: ds.samples.len(),
            train: ds.split.train.len(),
            validation: ds.split.val.len(),
            test: ds.split.test.len(),
            fractions: cfg.train.split,
            history: ds.history,
            horizon: ds.horizon,
            runs: &ds.provenance,
        },
    )?;
    write_manifest(&out, "gen-data", &cfg)?;
    println!(
        "wrote {} samples (train {}, validation {}, test {}) to {}",
        ds.samples.len(),
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len(),
        out.display()
    );
    Ok(())
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch {
        t.batch = v;
    }
    if let Some(v) = a.hidden {
        t.hidden = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.data {
        cfg.data_dir = v;
    }
    if let Some(v) = a.out {
        cfg.weights = v;
    }
    if cfg.train.epochs < DEFAULT_EPOCHS {
        eprintln!("warning: training for {} epochs, below the default {DEFAULT_EPOCHS}", cfg.train.epochs);
    }
    let data_path = cfg.data_dir.join(DATASET_FILE);
    if !data_path.exists() {
        return Err(Error::MissingFile(data_path));
    }
    let ds: Dataset = serde_json::from_reader(std::io::BufReader::new(File::open(&data_path)?))?;
    let outcome = fit(&ds, &cfg.train)?;

    let dir = cfg.weights.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    create_dir(&dir)?;
    let mut scenarios: Vec<String> = ds.provenance.iter().map(|p| p.scenario.clone()).collect();
    scenarios.dedup();
    let meta = WeightsMetadata {
        epochs: cfg.train.epochs,
        best_epoch: outcome.report.best_epoch,
        best_val_mse: outcome.report.best_val_mse,
        train_samples: ds.split.train.len(),
        scenarios,
    };
    save_weights(&cfg.weights, &outcome.predictor, meta)?;

    #[derive(Serialize)]
    struct TrainingReport<'a> {
        report: &'a siglab_core::predictor::TrainReport,
        validation: Option<siglab_core::predictor::EvalReport>,
        test: Option<siglab_core::predictor::EvalReport>,
    }
    write_json(
        &dir.join("training_report.json"),
        &TrainingReport { report: &outcome.report, validation: outcome.validation, test: outcome.test },
    )?;
    write_manifest(&dir, "train", &cfg)?;
    println!("wrote {} (best epoch {})", cfg.weights.display(), outcome.report.best_epoch);
    if let Some(test) = outcome.test {
        println!(
            "held-out queue RMSE {:.4} (persistence {:.4})",
            test.queue_rmse, test.persistence_queue_rmse
        );
    }
    Ok(())
}

fn apply_backend(cfg: &mut RunConfig, backend: Option<&str>) -> Result<()> {
    if let Some(b) = backend {
        cfg.episode.backend = parse_backend(b, &cfg.episode.backend)?;
    }
    Ok(())
}

pub fn run(mut cfg: RunConfig, a: RunArgs) -> Result<()> {
    if let Some(v) = a.scenario {
        cfg.scenario = v;
    }
    if let Some(v) = a.controller {
        cfg.controller = v.parse()?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.duration.is_some() {
        cfg.duration = a.duration;
    }
    if let Some(v) = a.weights {
        cfg.weights = v;
    }
    apply_backend(&mut cfg, a.backend.as_deref())?;
    if a.no_filter {
        cfg.episode.safety_filter = false;
    }
    if a.no_prediction {
        cfg.episode.context_prediction = false;
    }
    a.thresholds.apply(&mut cfg.episode);
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let out = cfg.out_or(&format!("out/run/{}_{}_s{}", cfg.scenario, cfg.controller.id(), cfg.seed));

    let predictor = if cfg.controller.needs_predictor() { Some(load_predictor(&cfg.weights)?) } else { None };
    let (log, metrics) = run_cell(&cfg.scenario, cfg.seed, cfg.duration, cfg.controller, &cfg.episode, predictor.as_ref())?;
    create_dir(&out)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    write_json(&out.join("audit.json"), &log.audit)?;
    jsonl::write(&out.join("decisions.jsonl"), &log.decisions)?;
    jsonl::write(&out.join("exchanges.jsonl"), &log.exchanges)?;
    jsonl::write(&out.join("snapshots.jsonl"), &log.snapshots)?;
    jsonl::write(&out.join("steps.jsonl"), &log.steps)?;
    write_manifest(&out, "run", &cfg)?;

    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
    println!("{} on {} (seed {}): {}", cfg.controller.label(), cfg.scenario, cfg.seed, out.display());
    println!("  avg waiting time   {} s", show(metrics.avg_waiting_time));
    println!("  avg queue length   {}", show(metrics.avg_queue_length));
    println!("  avg travel time    {} s", show(metrics.avg_travel_time));
    println!("  throughput         {}", metrics.throughput);
    println!("  decisions          {}", metrics.decisions);
    println!("  violation rate     {} %", show(metrics.constraint_violation_rate));
    if cfg.controller == ControllerKind::LlmAugmented {
        println!("  trigger rate       {} %", show(metrics.llm_trigger_rate));
        println!("  fallbacks          {}", metrics.fallbacks);
    }
    Ok(())
}

fn plan_from(cfg: &RunConfig, seeds: Option<Vec<u64>>, duration: Option<u32>, jobs: Option<usize>) -> ExperimentPlan {
    ExperimentPlan {
        seeds: seeds.unwrap_or_else(|| cfg.seeds.clone()),
        duration: duration.or(cfg.duration),
        jobs: jobs.unwrap_or(cfg.jobs),
        ablation_scenario: cfg.ablation_scenario.clone(),
        options: cfg.episode.clone(),
        ..Default::default()
    }
}

fn cell_file_name(i: usize, c: &CellResult) -> String {
    format!("{i:03}_{}_{}_s{}.json", c.scenario, c.method, c.seed)
}

/// Write every CSV derivable from `cells` into `dir`.
pub fn write_reports(dir: &Path, cells: &[CellResult]) -> Result<()> {
    let summary = summarize(cells);
    write_matrix_csv(File::create(dir.join("matrix.csv"))?, cells)?;
    write_long_csv(File::create(dir.join("long.csv"))?, cells)?;
    let is_variant = |m: &str| m.parse::<AblationVariant>().is_ok();
    let (variants, controllers): (Vec<_>, Vec<_>) = summary.into_iter().partition(|r| is_variant(&r.method));
    if !controllers.is_empty() {
        write_overall_table(File::create(dir.join("overall.csv"))?, &controllers)?;
        write_improvement_table(File::create(dir.join("improvement.csv"))?, &controllers)?;
        write_reasoner_table(File::create(dir.join("reasoner.csv"))?, &controllers)?;
    }
    if !variants.is_empty() {
        write_ablation_table(File::create(dir.join("ablation.csv"))?, &variants)?;
    }
    Ok(())
}

fn save_cells(dir: &Path, cells: &[CellResult]) -> Result<()> {
    let runs = dir.join("runs");
    if runs.exists() {
        fs::remove_dir_all(&runs)?;
    }
    create_dir(&runs)?;
    for (i, c) in cells.iter().enumerate() {
        write_json(&runs.join(cell_file_name(i, c)), c)?;
    }
    Ok(())
}

pub fn experiment(mut cfg: RunConfig, a: ExperimentArgs) -> Result<()> {
    apply_backend(&mut cfg, a.backend.as_deref())?;
    a.thresholds.apply(&mut cfg.episode);
    if let Some(v) = a.weights {
        cfg.weights = v;
    }
    let mut plan = plan_from(&cfg, a.seeds, a.duration, a.jobs);
    if let Some(s) = a.scenarios {
        plan.scenarios = s;
    }
    if let Some(c) = a.controllers {
        plan.controllers = c.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    }
    plan.validate()?;
    let out = a.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out/experiment"));
    let predictor = if plan.needs_predictor() { Some(load_predictor(&cfg.weights)?) } else { None };
    let result = run_matrix(&plan, predictor.as_ref())?;
    create_dir(&out)?;
    save_cells(&out, &result.cells)?;
    write_json(&out.join("plan.json"), &plan)?;
    write_reports(&out, &result.cells)?;
    write_manifest(&out, "experiment", &cfg)?;
    println!("{} runs, {} summary rows: {}", result.cells.len(), result.summary.len(), out.display());
    Ok(())
}

pub fn ablate(mut cfg: RunConfig, a: AblateArgs) -> Result<()> {
    apply_backend(&mut cfg, a.backend.as_deref())?;
    a.thresholds.apply(&mut cfg.episode);
    if let Some(v) = a.weights {
        cfg.weights = v;
    }
    if let Some(s) = a.scenario {
        cfg.ablation_scenario = s;
    }
    let mut plan = plan_from(&cfg, a.seeds, a.duration, a.jobs);
    if let Some(v) = a.variants {
        plan.ablations = v.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    }
    plan.validate()?;
    let out = a.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out/ablation"));
    let predictor = load_predictor(&cfg.weights)?;
    let result = run_ablation(&plan, Some(&predictor))?;
    create_dir(&out)?;
    save_cells(&out, &result.cells)?;
    write_json(&out.join("plan.json"), &plan)?;
    write_reports(&out, &result.cells)?;
    write_manifest(&out, "ablate", &cfg)?;
    println!("{} runs, {} variants: {}", result.cells.len(), result.summary.len(), out.display());
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let runs = a.dir.join("runs");
    if !runs.is_dir() {
        return Err(Error::MissingFile(runs));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Log(format!("no run files in {}", runs.display())));
    }
    let cells = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Log(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<CellResult>>>()?;
    write_reports(&a.dir, &cells)?;
    println!("rebuilt tables from {} runs in {}", cells.len(), a.dir.display());
    Ok(())
}
