//! Structured decision support: context documents, trigger gating, recommendation
//! parsing and validation, pluggable backends and the explanation checker.

mod backend;
mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use backend::{
    heuristic_recommendation, BackendFailure, BackendSpec, Exchange, ExchangeOutcome, FailureMode, FailingBackend,
    FaultyBackend, HeuristicBackend, HttpBackend, HttpConfig, Reasoner, ReasonerBackend, SYSTEM_PROMPT,
};
pub use parse::{extract_json_object, parse_and_validate, SchemaFailure, SchemaFailureReason, MAX_DURATION};

use crate::predictor::Forecast;
use crate::safety::ConstraintSet;
use crate::sim::{ApproachId, DirectionGroup, PerApproach, PhaseId, SignalCommand, SignalHead};
use crate::state::{ApproachFeatures, StateHistory, TrafficState};

/// `Extend_<phase>` or `Switch_<phase>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionName {
    Extend(PhaseId),
    Switch(PhaseId),
}

impl ActionName {
    pub fn phase(self) -> PhaseId {
        match self {
            ActionName::Extend(p) | ActionName::Switch(p) => p,
        }
    }

    /// Hold and Extend both name the current phase.
    pub fn from_command(cmd: SignalCommand, current: PhaseId) -> Self {
        match cmd {
            SignalCommand::Hold | SignalCommand::Extend { .. } => ActionName::Extend(current),
            SignalCommand::Switch { target } => ActionName::Switch(target),
        }
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionName::Extend(p) => write!(f, "Extend_{}", p.name()),
            ActionName::Switch(p) => write!(f, "Switch_{}", p.name()),
        }
    }
}

impl FromStr for ActionName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let parse = |rest: &str| PhaseId::from_name(rest).ok_or_else(|| format!("unknown phase in action {s:?}"));
        if let Some(rest) = s.strip_prefix("Extend_") {
            parse(rest).map(ActionName::Extend)
        } else if let Some(rest) = s.strip_prefix("Switch_") {
            parse(rest).map(ActionName::Switch)
        } else {
            Err(format!("unknown action {s:?}"))
        }
    }
}

impl Serialize for ActionName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskFlag {
    Low,
    Medium,
    High,
}

impl RiskFlag {
    pub fn name(self) -> &'static str {
        match self {
            RiskFlag::Low => "low",
            RiskFlag::Medium => "medium",
            RiskFlag::High => "high",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub accept_candidate_action: bool,
    pub recommended_action: ActionName,
    pub recommended_duration: u32,
    pub congestion_diagnosis: String,
    pub risk_flag: RiskFlag,
    pub safety_check: String,
    pub explanation: String,
}

/// Per-approach queue and waiting time, rounded to whole units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueBlock {
    pub north_queue: u32,
    pub south_queue: u32,
    pub east_queue: u32,
    pub west_queue: u32,
    pub north_waiting_time: u32,
    pub south_waiting_time: u32,
    pub east_waiting_time: u32,
    pub west_waiting_time: u32,
}

fn round_count(x: f64) -> u32 {
    if x.is_finite() && x > 0.0 {
        x.round() as u32
    } else {
        0
    }
}

impl QueueBlock {
    pub fn from_features(f: &PerApproach<ApproachFeatures>) -> Self {
        Self {
            north_queue: round_count(f.north.queue),
            south_queue: round_count(f.south.queue),
            east_queue: round_count(f.east.queue),
            west_queue: round_count(f.west.queue),
            north_waiting_time: round_count(f.north.wait),
            south_waiting_time: round_count(f.south.wait),
            east_waiting_time: round_count(f.east.wait),
            west_waiting_time: round_count(f.west.wait),
        }
    }

    pub fn queue(&self, a: ApproachId) -> u32 {
        match a {
            ApproachId::North => self.north_queue,
            ApproachId::South => self.south_queue,
            ApproachId::East => self.east_queue,
            ApproachId::West => self.west_queue,
        }
    }

    pub fn waiting_time(&self, a: ApproachId) -> u32 {
        match a {
            ApproachId::North => self.north_waiting_time,
            ApproachId::South => self.south_waiting_time,
            ApproachId::East => self.east_waiting_time,
            ApproachId::West => self.west_waiting_time,
        }
    }

    pub fn group_queue(&self, g: DirectionGroup) -> u32 {
        g.approaches().iter().map(|&a| self.queue(a)).sum()
    }

    /// Group with the larger summed queue; `None` on a tie.
    pub fn dominant_group(&self) -> Option<DirectionGroup> {
        let ns = self.group_queue(DirectionGroup::NorthSouth);
        let ew = self.group_queue(DirectionGroup::EastWest);
        match ns.cmp(&ew) {
            std::cmp::Ordering::Greater => Some(DirectionGroup::NorthSouth),
            std::cmp::Ordering::Less => Some(DirectionGroup::EastWest),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn max_queue(&self) -> u32 {
        ApproachId::ALL.iter().map(|&a| self.queue(a)).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConstraints {
    pub min_green: u32,
    pub max_green: u32,
    pub yellow_time: u32,
    pub pedestrian_request: bool,
    pub emergency_vehicle: bool,
}

/// The input document sent to a backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub intersection_id: String,
    pub current_phase: PhaseId,
    pub elapsed_green_time: u32,
    pub current_state: QueueBlock,
    pub predicted_state_next_60s: QueueBlock,
    pub candidate_action_from_lstm: ActionName,
    pub constraints: ContextConstraints,
}

impl DecisionContext {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("context serializes")
    }
}

/// Assemble the context document. The predicted block is the last forecast step.
pub fn build_context(
    intersection_id: &str,
    state: &TrafficState,
    forecast: &Forecast,
    candidate: SignalCommand,
    signal: &SignalHead,
    constraints: &ConstraintSet,
) -> DecisionContext {
    DecisionContext {
        intersection_id: intersection_id.to_string(),
        current_phase: signal.current_phase,
        elapsed_green_time: signal.elapsed_green,
        current_state: QueueBlock::from_features(&state.per_approach),
        predicted_state_next_60s: QueueBlock::from_features(forecast.last()),
        candidate_action_from_lstm: ActionName::from_command(candidate, signal.current_phase),
        constraints: ContextConstraints {
            min_green: constraints.timing.min_green,
            max_green: constraints.timing.max_green,
            yellow_time: constraints.timing.yellow,
            pedestrian_request: constraints.pedestrian_phase.is_some(),
            emergency_vehicle: constraints.emergency_approach.is_some(),
        },
    }
}

/// Score-gap threshold: a fixed number of score units or a fraction of the top score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ScoreGap {
    Absolute(f64),
    FractionOfTop(f64),
}

impl ScoreGap {
    pub fn threshold(self, top: f64) -> f64 {
        match self {
            ScoreGap::Absolute(v) => v,
            ScoreGap::FractionOfTop(f) => f * top,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerThresholds {
    pub tau_q: f64,
    pub tau_w: f64,
    pub tau_d: ScoreGap,
}

impl Default for TriggerThresholds {
    fn default() -> Self {
        Self { tau_q: 5.0, tau_w: 60.0, tau_d: ScoreGap::FractionOfTop(0.1) }
    }
}

impl TriggerThresholds {
    pub fn validate(&self) -> crate::Result<()> {
        let gap = match self.tau_d {
            ScoreGap::Absolute(v) | ScoreGap::FractionOfTop(v) => v,
        };
        if !(self.tau_q > 0.0 && self.tau_w > 0.0 && gap > 0.0) {
            return Err(crate::Error::Config(format!("trigger thresholds must be > 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    QueueSurge,
    WaitSurge,
    AmbiguousScores,
}

impl fmt::Display for TriggerReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerReason::QueueSurge => "queue surge",
            TriggerReason::WaitSurge => "wait surge",
            TriggerReason::AmbiguousScores => "ambiguous scores",
        })
    }
}

/// Change in queue and wait over the last sampling interval on the approach with the largest current queue.
pub fn surge_deltas(history: &StateHistory) -> (f64, f64) {
    let (Some(latest), Some(prev)) = (history.latest(), history.previous()) else {
        return (0.0, 0.0);
    };
    let mut worst = ApproachId::North;
    for a in ApproachId::ALL {
        if latest.per_approach[a].queue > latest.per_approach[worst].queue {
            worst = a;
        }
    }
    (
        latest.per_approach[worst].queue - prev.per_approach[worst].queue,
        latest.per_approach[worst].wait - prev.per_approach[worst].wait,
    )
}

/// Top-two score gap and the threshold it is compared with.
fn score_gap(scores: &[f64; 4], tau: ScoreGap) -> (f64, f64) {
    let mut sorted = *scores;
    sorted.sort_by(|a, b| b.total_cmp(a));
    (sorted[0] - sorted[1], tau.threshold(sorted[0]))
}

pub fn trigger_from_deltas(dq: f64, dw: f64, scores: &[f64; 4], thresholds: &TriggerThresholds) -> Option<TriggerReason> {
    if dq > thresholds.tau_q {
        return Some(TriggerReason::QueueSurge);
    }
    if dw > thresholds.tau_w {
        return Some(TriggerReason::WaitSurge);
    }
    let (gap, tau) = score_gap(scores, thresholds.tau_d);
    (gap < tau).then_some(TriggerReason::AmbiguousScores)
}

/// Whether to consult the reasoner at this decision point, and why.
pub fn should_trigger(history: &StateHistory, scores: &[f64; 4], thresholds: &TriggerThresholds) -> Option<TriggerReason> {
    let (dq, dw) = surge_deltas(history);
    trigger_from_deltas(dq, dw, scores, thresholds)
}

fn mentions_phase(text: &str, phase: PhaseId) -> bool {
    let lower = text.to_lowercase();
    if lower.contains(&phase.name().to_lowercase()) {
        return true;
    }
    let group = lower.contains(phase.group().label()) || lower.contains(&phase.group().label().replace('-', " "));
    match phase.lane_kind() {
        crate::sim::LaneKind::Through => group,
        crate::sim::LaneKind::Left => group && lower.contains("left"),
    }
}

/// Checks that a recommendation's diagnosis and explanation agree with the context it answered.
pub fn explanation_validity(rec: &Recommendation, ctx: &DecisionContext) -> bool {
    let diagnosis = rec.congestion_diagnosis.to_lowercase();
    let position = |g: DirectionGroup| {
        let label = g.label();
        diagnosis.find(label).or_else(|| diagnosis.find(&label.replace('-', " ")))
    };
    let names_dominant = match ctx.predicted_state_next_60s.dominant_group() {
        None => position(DirectionGroup::NorthSouth).is_some() || position(DirectionGroup::EastWest).is_some(),
        Some(dom) => match (position(dom), position(dom.other())) {
            (Some(d), Some(o)) => d < o,
            (Some(_), None) => true,
            _ => false,
        },
    };
    let phase = rec.recommended_action.phase();
    let text = format!("{} {}", rec.congestion_diagnosis, rec.explanation);
    let current_extension = rec.recommended_action == ActionName::Extend(ctx.current_phase)
        && text.to_lowercase().contains("current phase");
    let names_phase = mentions_phase(&text, phase) || current_extension;
    let c = &ctx.constraints;
    let duration_ok = (c.min_green..=c.max_green).contains(&rec.recommended_duration);
    names_dominant && names_phase && duration_ok
}
