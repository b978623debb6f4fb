//! Intersection signal-control laboratory.
//!
//! A seeded point-queue simulator of a four-arm intersection, a from-scratch
//! LSTM state forecaster, fixed-time / actuated / predictive controllers, a
//! structured reasoner loop gated by a safety filter, and the experiment
//! harness that runs and reports the scenario matrix.

pub mod control;
pub mod episode;
pub mod experiments;
pub mod error;
pub mod jsonl;
pub mod predictor;
pub mod reasoner;
pub mod safety;
pub mod sim;
pub mod state;

pub use control::{ControllerConfig, ControllerKind, DemandWeights};
pub use episode::{run_episode, DecisionRecord, EpisodeOptions, RunLog};
pub use error::{Error, Result};
pub use experiments::{accumulate, run_ablation, run_matrix, AblationVariant, ExperimentPlan, ExperimentResult, MetricsReport};
pub use predictor::{Forecast, Predictor, TrainConfig};
pub use reasoner::{BackendSpec, DecisionContext, Recommendation, TriggerThresholds};
pub use safety::{AuditReport, ConstraintSet, FilterOutcome};
pub use sim::{
    build_scenario, ApproachId, LaneId, PhaseId, ScenarioConfig, SignalCommand, SignalHead, SignalTiming, SimParams,
    Simulator,
};
pub use state::{NormStats, StateHistory, TrafficState};
