//! Deterministic seeded simulator of a four-arm, four-phase intersection.

mod engine;
mod geometry;
mod scenario;
mod signal;

pub use engine::{
    Arrival, LaneFeatures, LaneQueue, SignalSample, SimParams, Simulator, StepRecord, Vehicle,
};
pub use geometry::{ApproachId, DirectionGroup, LaneId, LaneKind, PerApproach, PhaseId};
pub use scenario::{
    build_scenario, EmergencyEvent, PedestrianWindow, RateSchedule, RateSegment, ScenarioConfig,
    EVALUATION_SCENARIOS, SCENARIO_NAMES, SURGE_END, SURGE_START,
};
pub use signal::{Interval, SignalCommand, SignalHead, SignalTiming};
