//! CSV emitters for the matrix, the seed-pooled tables, and the long format.
//!
//! Missing values are written as `n/a`. Numbers use fixed precision so that
//! identical results give byte-identical files.

use std::io::Write;

use super::{CellResult, MetricsReport, SummaryRow};
use crate::control::ControllerKind;
use crate::error::Result;

pub fn scenario_label(name: &str) -> String {
    match name {
        "balanced" => "Balanced".into(),
        "directional_peak" => "Directional Peak".into(),
        "sudden_surge" => "Sudden Surge".into(),
        "fluctuating" => "Fluctuating".into(),
        other => other.into(),
    }
}

fn num(v: f64, prec: usize) -> String {
    format!("{v:.prec$}")
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| num(v, prec))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.1}%"))
}

/// Named scalar fields of a report, in column order.
pub fn metric_fields(m: &MetricsReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("avg_waiting_time", m.avg_waiting_time),
        ("avg_queue_length", m.avg_queue_length),
        ("avg_travel_time", m.avg_travel_time),
        ("stops_per_vehicle", m.stops_per_vehicle),
        ("throughput", Some(m.throughput)),
        ("co2_kg", Some(m.co2_kg)),
        ("vehicles_arrived", Some(m.vehicles_arrived as f64)),
        ("decisions", Some(m.decisions as f64)),
        ("violating_decisions", Some(m.violating_decisions as f64)),
        ("triggered", Some(m.triggered as f64)),
        ("fallbacks", Some(m.fallbacks as f64)),
        ("constraint_violation_rate", m.constraint_violation_rate),
        ("llm_trigger_rate", m.llm_trigger_rate),
        ("candidate_acceptance_rate", m.candidate_acceptance_rate),
        ("action_adjustment_rate", m.action_adjustment_rate),
        ("explanation_validity_rate", m.explanation_validity_rate),
    ]
}

/// One row per cell with every metric.
pub fn write_matrix_csv<W: Write>(out: W, cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario", "method", "seed"];
    header.extend(metric_fields(&MetricsReport::default()).iter().map(|(k, _)| *k));
    w.write_record(&header)?;
    for c in cells {
        let mut row = vec![c.scenario.clone(), c.method.clone(), c.seed.to_string()];
        row.extend(metric_fields(&c.metrics).into_iter().map(|(_, v)| opt(v, 6)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed-pooled overall comparison.
pub fn write_overall_table<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Scenario",
        "Method",
        "Avg. Waiting Time (s)",
        "Avg. Queue Length",
        "Avg. Travel Time (s)",
        "Stops / Vehicle",
        "Throughput",
        "CO2 Emission (kg, surrogate)",
    ])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            scenario_label(&r.scenario),
            r.label.clone(),
            opt(m.avg_waiting_time, 1),
            opt(m.avg_queue_length, 1),
            opt(m.avg_travel_time, 1),
            opt(m.stops_per_vehicle, 2),
            num(m.throughput, 0),
            num(m.co2_kg, 1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Relative change of `new` against `base`, in percent; positive means `new` is lower.
pub fn reduction(base: Option<f64>, new: Option<f64>) -> Option<f64> {
    match (base, new) {
        (Some(b), Some(n)) if b != 0.0 => Some(100.0 * (b - n) / b),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Improvement {
    pub scenario: String,
    pub waiting_time: Option<f64>,
    pub queue_length: Option<f64>,
    pub travel_time: Option<f64>,
    pub co2: Option<f64>,
    pub throughput_increase: Option<f64>,
}

/// Improvement of the reasoner-augmented controller over the predictive one, per scenario.
pub fn improvements(rows: &[SummaryRow]) -> Vec<Improvement> {
    let find = |s: &str, k: ControllerKind| rows.iter().find(|r| r.scenario == s && r.method == k.id());
    let mut scenarios: Vec<&str> = Vec::new();
    for r in rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    scenarios
        .into_iter()
        .filter_map(|s| {
            let base = &find(s, ControllerKind::LstmPredictive)?.metrics;
            let new = &find(s, ControllerKind::LlmAugmented)?.metrics;
            Some(Improvement {
                scenario: s.into(),
                waiting_time: reduction(base.avg_waiting_time, new.avg_waiting_time),
                queue_length: reduction(base.avg_queue_length, new.avg_queue_length),
                travel_time: reduction(base.avg_travel_time, new.avg_travel_time),
                co2: reduction(Some(base.co2_kg), Some(new.co2_kg)),
                throughput_increase: reduction(Some(base.throughput), Some(new.throughput)).map(|v| -v),
            })
        })
        .collect()
}

pub fn write_improvement_table<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Scenario",
        "Waiting Time Reduction",
        "Queue Length Reduction",
        "Travel Time Reduction",
        "CO2 Reduction",
        "Throughput Increase",
    ])?;
    for i in improvements(rows) {
        w.write_record([
            format!("{} Demand", scenario_label(&i.scenario)),
            pct(i.waiting_time),
            pct(i.queue_length),
            pct(i.travel_time),
            pct(i.co2),
            pct(i.throughput_increase),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_table<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Method Variant",
        "Avg. Waiting Time (s)",
        "Avg. Queue Length",
        "Avg. Travel Time (s)",
        "Constraint Violation Rate",
    ])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.label.clone(),
            opt(m.avg_waiting_time, 1),
            opt(m.avg_queue_length, 1),
            opt(m.avg_travel_time, 1),
            pct(m.constraint_violation_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reasoner behaviour, one row per scenario that ran the reasoner-augmented controller.
pub fn write_reasoner_table<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Scenario",
        "LLM Trigger Rate",
        "Candidate Action Acceptance Rate",
        "Action Adjustment Rate",
        "Explanation Validity Rate",
        "Constraint Violation after Filtering",
    ])?;
    for r in rows.iter().filter(|r| r.method == ControllerKind::LlmAugmented.id()) {
        let m = &r.metrics;
        w.write_record([
            format!("{} Demand", scenario_label(&r.scenario)),
            pct(m.llm_trigger_rate),
            pct(m.candidate_acceptance_rate),
            pct(m.action_adjustment_rate),
            pct(m.explanation_validity_rate),
            pct(m.constraint_violation_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(scenario, controller, metric, seed, value)` rows; undefined values are skipped.
pub fn write_long_csv<W: Write>(out: W, cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "controller", "metric", "seed", "value"])?;
    for c in cells {
        for (k, v) in metric_fields(&c.metrics) {
            if let Some(v) = v {
                w.write_record([c.scenario.clone(), c.method.clone(), k.to_string(), c.seed.to_string(), num(v, 6)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
