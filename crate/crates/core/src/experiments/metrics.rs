//! Per-run metrics from a run log, and pooling across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::episode::RunLog;
use crate::error::{Error, Result};
use crate::safety::audit;

/// CO₂ surrogate rates: grams per idle second, per moving second, per stop.
pub const CO2_IDLE_G_PER_S: f64 = 0.8;
pub const CO2_MOVING_G_PER_S: f64 = 2.0;
pub const CO2_G_PER_STOP: f64 = 5.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: usize,
    pub vehicles_arrived: u64,
    /// Vehicles that left the network (throughput summed over `runs`).
    pub vehicles_exited: u64,
    pub snapshots: usize,
    pub avg_waiting_time: Option<f64>,
    pub avg_queue_length: Option<f64>,
    pub avg_travel_time: Option<f64>,
    pub stops_per_vehicle: Option<f64>,
    /// Exited vehicles per run.
    pub throughput: f64,
    /// Surrogate emission per run, kg.
    pub co2_kg: f64,
    pub decisions: usize,
    pub violating_decisions: usize,
    pub triggered: usize,
    pub accepted: usize,
    pub adjusted: usize,
    pub valid_explanations: usize,
    pub fallbacks: usize,
    pub constraint_violation_rate: Option<f64>,
    pub llm_trigger_rate: Option<f64>,
    pub candidate_acceptance_rate: Option<f64>,
    pub action_adjustment_rate: Option<f64>,
    pub explanation_validity_rate: Option<f64>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

impl MetricsReport {
    fn fill_rates(&mut self) {
        self.constraint_violation_rate = pct(self.violating_decisions, self.decisions);
        self.llm_trigger_rate = pct(self.triggered, self.decisions);
        self.candidate_acceptance_rate = pct(self.accepted, self.triggered);
        self.action_adjustment_rate = pct(self.adjusted, self.triggered);
        self.explanation_validity_rate = pct(self.valid_explanations, self.triggered);
    }

    /// Pool several runs: per-vehicle means weighted by exited vehicles, queue by snapshots,
    /// throughput and CO₂ as per-run means, rates from summed counts.
    pub fn pool(reports: &[MetricsReport]) -> MetricsReport {
        let mut out = MetricsReport::default();
        let weighted = |f: fn(&MetricsReport) -> Option<f64>, w: fn(&MetricsReport) -> f64| {
            let (mut num, mut den) = (0.0, 0.0);
            for r in reports {
                if let Some(v) = f(r) {
                    num += v * w(r);
                    den += w(r);
                }
            }
            (den > 0.0).then(|| num / den)
        };
        out.avg_waiting_time = weighted(|r| r.avg_waiting_time, |r| r.vehicles_exited as f64);
        out.avg_travel_time = weighted(|r| r.avg_travel_time, |r| r.vehicles_exited as f64);
        out.stops_per_vehicle = weighted(|r| r.stops_per_vehicle, |r| r.vehicles_exited as f64);
        out.avg_queue_length = weighted(|r| r.avg_queue_length, |r| r.snapshots as f64);
        let runs: usize = reports.iter().map(|r| r.runs).sum();
        out.runs = runs;
        for r in reports {
            out.vehicles_arrived += r.vehicles_arrived;
            out.vehicles_exited += r.vehicles_exited;
            out.snapshots += r.snapshots;
            out.decisions += r.decisions;
            out.violating_decisions += r.violating_decisions;
            out.triggered += r.triggered;
            out.accepted += r.accepted;
            out.adjusted += r.adjusted;
            out.valid_explanations += r.valid_explanations;
            out.fallbacks += r.fallbacks;
        }
        if runs > 0 {
            out.throughput = out.vehicles_exited as f64 / runs as f64;
            out.co2_kg = reports.iter().map(|r| r.co2_kg * r.runs as f64).sum::<f64>() / runs as f64;
        }
        out.fill_rates();
        out
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Track {
    entry: u32,
    exit: Option<u32>,
    halted_since: Option<u32>,
    idle: u32,
    stops: u32,
}

/// Metrics of one complete run.
pub fn accumulate(log: &RunLog) -> Result<MetricsReport> {
    if log.steps.len() != log.duration as usize {
        return Err(Error::Log(format!("log has {} of {} steps", log.steps.len(), log.duration)));
    }
    if let Some((i, s)) = log.steps.iter().enumerate().find(|(i, s)| s.t as usize != *i) {
        return Err(Error::Log(format!("step {i} is stamped t={}", s.t)));
    }

    let mut vehicles: BTreeMap<u64, Track> = BTreeMap::new();
    let unknown = |id: u64, t: u32| Error::Log(format!("event for unknown vehicle {id} at t={t}"));
    for step in &log.steps {
        let t = step.t;
        for a in &step.arrivals {
            vehicles.insert(a.id, Track { entry: t, ..Default::default() });
        }
        // Vehicles queued straight into the spill-back buffer stop before anything else happens this second.
        let (at_entry, later): (Vec<u64>, Vec<u64>) =
            step.halted.iter().partition(|id| step.arrivals.iter().any(|a| a.id == **id));
        for id in at_entry {
            let v = vehicles.get_mut(&id).ok_or_else(|| unknown(id, t))?;
            v.halted_since = Some(t);
            v.stops += 1;
        }
        for &id in step.departures.iter().chain(&step.released) {
            let v = vehicles.get_mut(&id).ok_or_else(|| unknown(id, t))?;
            if let Some(s) = v.halted_since.take() {
                v.idle += t - s;
            }
        }
        for &id in &step.departures {
            vehicles.get_mut(&id).ok_or_else(|| unknown(id, t))?.exit = Some(t);
        }
        for id in later {
            let v = vehicles.get_mut(&id).ok_or_else(|| unknown(id, t))?;
            v.halted_since = Some(t);
            v.stops += 1;
        }
    }

    let mut m = MetricsReport { runs: 1, vehicles_arrived: vehicles.len() as u64, ..Default::default() };
    let (mut wait, mut travel, mut stops) = (0u64, 0u64, 0u64);
    let (mut idle_s, mut moving_s, mut all_stops) = (0u64, 0u64, 0u64);
    for v in vehicles.values() {
        let idle = v.idle + v.halted_since.map_or(0, |s| log.duration - s);
        let end = v.exit.unwrap_or(log.duration);
        let moving = (end - v.entry).saturating_sub(idle);
        idle_s += u64::from(idle);
        moving_s += u64::from(moving);
        all_stops += u64::from(v.stops);
        if let Some(exit) = v.exit {
            m.vehicles_exited += 1;
            wait += u64::from(v.idle);
            travel += u64::from(exit - v.entry);
            stops += u64::from(v.stops);
        }
    }
    let n = m.vehicles_exited;
    if n > 0 {
        m.avg_waiting_time = Some(wait as f64 / n as f64);
        m.avg_travel_time = Some(travel as f64 / n as f64);
        m.stops_per_vehicle = Some(stops as f64 / n as f64);
    }
    m.throughput = n as f64;
    m.co2_kg = (CO2_IDLE_G_PER_S * idle_s as f64 + CO2_MOVING_G_PER_S * moving_s as f64 + CO2_G_PER_STOP * all_stops as f64)
        / 1000.0;
    m.snapshots = log.snapshots.len();
    if !log.snapshots.is_empty() {
        m.avg_queue_length = Some(log.snapshots.iter().map(|s| s.total_queue()).sum::<f64>() / m.snapshots as f64);
    }

    let times: Vec<u32> = log.decisions.iter().map(|d| d.time).collect();
    let report = audit(&log.timeline(), &times, &log.timing)?;
    m.decisions = report.decisions;
    m.violating_decisions = report.violating_decisions;
    for d in &log.decisions {
        m.triggered += usize::from(d.triggered());
        m.accepted += usize::from(d.accepted());
        m.adjusted += usize::from(d.adjusted());
        m.valid_explanations += usize::from(d.triggered() && d.explanation_valid == Some(true));
        m.fallbacks += usize::from(d.fallback.is_some());
    }
    m.fill_rates();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControllerKind;
    use crate::episode::{run_episode, EpisodeOptions};
    use crate::sim::build_scenario;

    #[test]
    fn quiet_run_has_no_vehicle_metrics() {
        let mut cfg = build_scenario("balanced").unwrap().with_duration(120);
        for a in crate::sim::ApproachId::ALL {
            cfg.arrival_rates[a] = crate::sim::RateSchedule::constant(0.0);
        }
        let log = run_episode(&cfg, ControllerKind::FixedTime, &EpisodeOptions::default(), None).unwrap();
        let m = accumulate(&log).unwrap();
        assert_eq!(m.vehicles_exited, 0);
        assert_eq!(m.avg_waiting_time, None);
        assert_eq!(m.avg_travel_time, None);
        assert_eq!(m.throughput, 0.0);
        assert_eq!(m.llm_trigger_rate, Some(0.0));
        assert_eq!(m.candidate_acceptance_rate, None);
        assert_eq!(m.constraint_violation_rate, Some(0.0));
    }

    #[test]
    fn truncated_log_is_rejected() {
        let cfg = build_scenario("balanced").unwrap().with_duration(60);
        let mut log = run_episode(&cfg, ControllerKind::RuleBased, &EpisodeOptions::default(), None).unwrap();
        log.steps.pop();
        assert_eq!(accumulate(&log).unwrap_err().class(), "log");
    }

    #[test]
    fn agrees_with_simulator_bookkeeping() {
        use crate::sim::Simulator;
        let cfg = build_scenario("directional_peak").unwrap().with_seed(9).with_duration(600);
        let log = run_episode(&cfg, ControllerKind::FixedTime, &EpisodeOptions::default(), None).unwrap();
        let m = accumulate(&log).unwrap();
        // Replay the same commands and read the simulator's own per-vehicle state.
        let mut sim = Simulator::with_defaults(cfg).unwrap();
        for s in &log.steps {
            sim.step(s.command).unwrap();
        }
        let exited = sim.exited_vehicles();
        assert_eq!(m.vehicles_exited as usize, exited.len());
        let wait: u32 = exited.iter().map(|v| v.waited).sum();
        let stops: u32 = exited.iter().map(|v| v.stop_count).sum();
        assert!((m.avg_waiting_time.unwrap() - f64::from(wait) / exited.len() as f64).abs() < 1e-9);
        assert!((m.stops_per_vehicle.unwrap() - f64::from(stops) / exited.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn pooling_weights_by_vehicles() {
        let a = MetricsReport { runs: 1, vehicles_exited: 10, avg_waiting_time: Some(10.0), throughput: 10.0, ..Default::default() };
        let b = MetricsReport { runs: 1, vehicles_exited: 30, avg_waiting_time: Some(30.0), throughput: 30.0, ..Default::default() };
        let p = MetricsReport::pool(&[a, b]);
        assert_eq!(p.avg_waiting_time, Some(25.0));
        assert_eq!(p.throughput, 20.0);
        assert_eq!(p.vehicles_exited, 40);
        assert_eq!(p.runs, 2);
    }
}
