//! Demand scenarios and their arrival-rate schedules.

use serde::{Deserialize, Serialize};

use super::geometry::{ApproachId, PerApproach, PhaseId};
use crate::error::{Error, Result};

/// Names accepted by [`build_scenario`].
pub const SCENARIO_NAMES: [&str; 4] = ["balanced", "directional_peak", "sudden_surge", "fluctuating"];

/// The three evaluation scenarios, in increasing order of load.
pub const EVALUATION_SCENARIOS: [&str; 3] = ["balanced", "directional_peak", "sudden_surge"];

/// Time-varying arrival rate in vehicles/hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    Constant { rate: f64 },
    /// Step function: each segment's rate holds from its start until the next segment.
    Piecewise { segments: Vec<RateSegment> },
    /// `min + (max - min) * (1 - cos(2πt/period)) / 2`
    Sinusoid { min: f64, max: f64, period: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub start: u32,
    pub rate: f64,
}

impl RateSchedule {
    pub fn constant(rate: f64) -> Self {
        RateSchedule::Constant { rate }
    }

    pub fn rate_at(&self, t: u32) -> f64 {
        match self {
            RateSchedule::Constant { rate } => *rate,
            RateSchedule::Piecewise { segments } => segments
                .iter()
                .take_while(|s| s.start <= t)
                .last()
                .map_or(0.0, |s| s.rate),
            RateSchedule::Sinusoid { min, max, period } => {
                let phase = 2.0 * std::f64::consts::PI * f64::from(t) / period;
                min + (max - min) * (1.0 - phase.cos()) / 2.0
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RateSchedule::Constant { rate } => rate.is_finite() && *rate >= 0.0,
            RateSchedule::Piecewise { segments } => {
                segments.windows(2).all(|w| w[0].start < w[1].start)
                    && segments.iter().all(|s| s.rate.is_finite() && s.rate >= 0.0)
            }
            RateSchedule::Sinusoid { min, max, period } => {
                min.is_finite() && max.is_finite() && *min >= 0.0 && max >= min && *period > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid rate schedule {self:?}")))
        }
    }
}

/// A pedestrian call that binds `phase`: while active, switches must not skip it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianWindow {
    pub start: u32,
    pub end: u32,
    pub phase: PhaseId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergencyEvent {
    pub time: u32,
    pub approach: ApproachId,
    #[serde(default = "default_emergency_duration")]
    pub duration: u32,
}

fn default_emergency_duration() -> u32 {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_duration")]
    pub duration: u32,
    pub arrival_rates: PerApproach<RateSchedule>,
    #[serde(default = "default_left_turn_fraction")]
    pub left_turn_fraction: f64,
    #[serde(default)]
    pub pedestrian_windows: Vec<PedestrianWindow>,
    #[serde(default)]
    pub emergency_events: Vec<EmergencyEvent>,
    #[serde(default)]
    pub seed: u64,
}

fn default_duration() -> u32 {
    3600
}

fn default_left_turn_fraction() -> f64 {
    0.25
}

impl ScenarioConfig {
    pub fn uniform(name: &str, rate: f64) -> Self {
        Self {
            name: name.to_string(),
            duration: default_duration(),
            arrival_rates: PerApproach::from_fn(|_| RateSchedule::constant(rate)),
            left_turn_fraction: default_left_turn_fraction(),
            pedestrian_windows: Vec::new(),
            emergency_events: Vec::new(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_duration(mut self, duration: u32) -> Self {
        self.duration = duration;
        self
    }

    pub fn rate_at(&self, approach: ApproachId, t: u32) -> f64 {
        self.arrival_rates[approach].rate_at(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 {
            return Err(Error::Config(format!("scenario {:?}: duration must be > 0", self.name)));
        }
        if !(0.0..=1.0).contains(&self.left_turn_fraction) {
            return Err(Error::Config(format!(
                "scenario {:?}: left_turn_fraction {} outside [0, 1]",
                self.name, self.left_turn_fraction
            )));
        }
        for (_, schedule) in self.arrival_rates.iter() {
            schedule.validate()?;
        }
        for w in &self.pedestrian_windows {
            if w.start > w.end || w.end > self.duration {
                return Err(Error::Config(format!(
                    "scenario {:?}: pedestrian window {}..{} outside [0, {}]",
                    self.name, w.start, w.end, self.duration
                )));
            }
        }
        for e in &self.emergency_events {
            if e.time > self.duration {
                return Err(Error::Config(format!(
                    "scenario {:?}: emergency event at {} after end {}",
                    self.name, e.time, self.duration
                )));
            }
        }
        Ok(())
    }

    /// Pedestrian-bound phase active at `t`, if any (earliest window wins).
    pub fn pedestrian_at(&self, t: u32) -> Option<PhaseId> {
        self.pedestrian_windows
            .iter()
            .find(|w| w.start <= t && t < w.end)
            .map(|w| w.phase)
    }

    pub fn emergency_at(&self, t: u32) -> Option<ApproachId> {
        self.emergency_events
            .iter()
            .find(|e| e.time <= t && t < e.time.saturating_add(e.duration))
            .map(|e| e.approach)
    }
}

/// Surge window for `sudden_surge`: N and S doubled on [1200, 2100).
pub const SURGE_START: u32 = 1200;
pub const SURGE_END: u32 = 2100;

pub fn build_scenario(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "balanced" => ScenarioConfig::uniform(name, 450.0),
        "directional_peak" => {
            let mut cfg = ScenarioConfig::uniform(name, 350.0);
            cfg.arrival_rates.north = RateSchedule::constant(700.0);
            cfg.arrival_rates.south = RateSchedule::constant(700.0);
            cfg
        }
        "sudden_surge" => {
            let mut cfg = ScenarioConfig::uniform(name, 450.0);
            let surge = RateSchedule::Piecewise {
                segments: vec![
                    RateSegment { start: 0, rate: 450.0 },
                    RateSegment { start: SURGE_START, rate: 900.0 },
                    RateSegment { start: SURGE_END, rate: 450.0 },
                ],
            };
            cfg.arrival_rates.north = surge.clone();
            cfg.arrival_rates.south = surge;
            cfg
        }
        // Training-only demand pattern.
        "fluctuating" => {
            let mut cfg = ScenarioConfig::uniform(name, 0.0);
            cfg.arrival_rates = PerApproach::from_fn(|_| RateSchedule::Sinusoid {
                min: 300.0,
                max: 600.0,
                period: 900.0,
            });
            cfg
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?} (expected one of {SCENARIO_NAMES:?})"
            )))
        }
    };
    Ok(cfg)
}
