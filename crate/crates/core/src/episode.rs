//! One simulated run under one controller: decision timing, the reasoner loop and the raw log.

use serde::{Deserialize, Serialize};

use crate::control::{
    demand_scores, fixed_time_decide, lstm_predictive_decide, rule_based_decide, ControllerConfig, ControllerKind,
    LaneShares,
};
use crate::error::{Error, Result};
use crate::predictor::{Forecast, Predictor};
use crate::reasoner::{
    build_context, explanation_validity, should_trigger, BackendSpec, Exchange, Reasoner, Recommendation,
    TriggerReason, TriggerThresholds,
};
use crate::safety::{audit, filter, recommendation_command, AuditReport, ConstraintSet, Disposition};
use crate::sim::{
    Interval, LaneFeatures, PhaseId, ScenarioConfig, SignalCommand, SignalHead, SignalTiming, SimParams, Simulator,
    StepRecord,
};
use crate::state::{aggregate_observation, StateHistory, TrafficState, HISTORY_LEN, SAMPLE_INTERVAL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeOptions {
    pub timing: SignalTiming,
    pub params: SimParams,
    pub controller: ControllerConfig,
    pub thresholds: TriggerThresholds,
    pub backend: BackendSpec,
    /// When false, schema-valid recommendations are executed without the safety filter.
    pub safety_filter: bool,
    /// When false, the reasoner sees the current state in place of the forecast.
    pub context_prediction: bool,
    pub call_budget: Option<usize>,
    pub intersection_id: String,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            timing: SignalTiming::default(),
            params: SimParams::default(),
            controller: ControllerConfig::default(),
            thresholds: TriggerThresholds::default(),
            backend: BackendSpec::Heuristic,
            safety_filter: true,
            context_prediction: true,
            call_budget: None,
            intersection_id: "I1".to_string(),
        }
    }
}

impl EpisodeOptions {
    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        if t.min_green == 0 || t.min_green > t.max_green || t.yellow == 0 {
            return Err(Error::Config(format!("invalid signal timing {t:?}")));
        }
        self.controller.validate()?;
        self.thresholds.validate()?;
        self.backend.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: u32,
    pub controller: ControllerKind,
    pub phase: PhaseId,
    pub elapsed_green: u32,
    pub candidate: SignalCommand,
    pub trigger: Option<TriggerReason>,
    pub recommendation: Option<Recommendation>,
    /// Why the candidate was kept after a failed consultation.
    pub fallback: Option<String>,
    #[serde(rename = "final")]
    pub final_command: SignalCommand,
    /// Filter verdict; absent when the filter is disabled.
    pub disposition: Option<Disposition>,
    pub violated: Vec<String>,
    pub explanation_valid: Option<bool>,
    /// Whether executing `final` for the planned span breaks a timing rule (computed before stepping).
    pub expected_violation: bool,
    /// Filled in from the independent audit after the run.
    pub audited_violation: bool,
}

impl DecisionRecord {
    pub fn triggered(&self) -> bool {
        self.trigger.is_some()
    }

    pub fn accepted(&self) -> bool {
        self.triggered() && self.recommendation.as_ref().is_some_and(|r| r.accept_candidate_action)
    }

    /// The reasoner changed what would otherwise have been executed.
    pub fn adjusted(&self) -> bool {
        self.triggered()
            && self.recommendation.is_some()
            && (matches!(
                self.disposition,
                Some(Disposition::ClampedRecommendation | Disposition::RejectedToCandidate)
            ) || self.final_command != self.candidate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: String,
    pub seed: u64,
    pub duration: u32,
    pub controller: ControllerKind,
    pub timing: SignalTiming,
    pub safety_filter: bool,
    pub context_prediction: bool,
    pub backend: Option<String>,
    pub steps: Vec<StepRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub snapshots: Vec<TrafficState>,
    pub exchanges: Vec<Exchange>,
    pub audit: AuditReport,
}

impl RunLog {
    pub fn timeline(&self) -> Vec<(Interval, PhaseId)> {
        self.steps.iter().map(|s| (s.signal.interval, s.signal.phase)).collect()
    }

    pub fn fallbacks(&self) -> usize {
        self.decisions.iter().filter(|d| d.fallback.is_some()).count()
    }
}

/// Seconds until the next decision after issuing `cmd` from `head`.
pub fn decision_span(cmd: SignalCommand, head: &SignalHead, timing: &SignalTiming, interval: u32) -> u32 {
    let e = head.elapsed_green;
    match cmd {
        SignalCommand::Switch { .. } => timing.yellow + timing.min_green,
        SignalCommand::Extend { duration } => duration.max(1),
        SignalCommand::Hold if e < timing.min_green => timing.min_green - e,
        SignalCommand::Hold if e < timing.max_green => interval.min(timing.max_green - e),
        SignalCommand::Hold => interval,
    }
}

/// Whether running `cmd` for `span` seconds from `head` breaks min or max green.
fn breaks_timing(cmd: SignalCommand, head: &SignalHead, timing: &SignalTiming, span: u32) -> bool {
    let e = head.elapsed_green;
    match cmd {
        SignalCommand::Switch { .. } => e < timing.min_green,
        _ => span > 0 && e + span > timing.max_green,
    }
}

fn executable(cmd: SignalCommand, head: &SignalHead, timing: &SignalTiming) -> bool {
    match cmd {
        SignalCommand::Switch { target } => {
            head.is_green() && target != head.current_phase && head.elapsed_green >= timing.min_green
        }
        _ => true,
    }
}

struct Decider<'a> {
    cfg: &'a ScenarioConfig,
    kind: ControllerKind,
    opts: &'a EpisodeOptions,
    predictor: Option<&'a Predictor>,
    reasoner: Option<Reasoner>,
}

impl Decider<'_> {
    fn decide(&mut self, t: u32, lanes: &[LaneFeatures; 8], head: &SignalHead, history: &StateHistory) -> DecisionRecord {
        let opts = self.opts;
        let timing = &opts.timing;
        let cc = &opts.controller;
        let constraints = ConstraintSet::at(*timing, self.cfg, t);

        let forecast: Option<Forecast> = self.predictor.and_then(|p| p.predict(history).ok());
        let shares = LaneShares::observed(lanes, cc.left_turn_fraction);
        let scores = forecast.as_ref().map(|f| demand_scores(f, &cc.weights, &shares));
        let raw = match (self.kind, &scores) {
            (ControllerKind::FixedTime, _) => fixed_time_decide(head, cc),
            (ControllerKind::RuleBased, _) | (_, None) => rule_based_decide(lanes, head, cc, timing),
            (_, Some(s)) => lstm_predictive_decide(s, head, cc, timing),
        };
        let base = filter(raw, None, head, &constraints);
        let candidate = base.final_command;

        let mut record = DecisionRecord {
            time: t,
            controller: self.kind,
            phase: head.current_phase,
            elapsed_green: head.elapsed_green,
            candidate,
            trigger: None,
            recommendation: None,
            fallback: None,
            final_command: candidate,
            disposition: opts.safety_filter.then_some(Disposition::CandidatePassthrough),
            violated: Vec::new(),
            explanation_valid: None,
            expected_violation: false,
            audited_violation: false,
        };

        let (Some(reasoner), Some(forecast), Some(scores)) = (self.reasoner.as_mut(), forecast, scores) else {
            return record;
        };
        let Some(reason) = should_trigger(history, &scores, &opts.thresholds) else {
            return record;
        };
        record.trigger = Some(reason);
        let state = aggregate_observation(t, lanes, head);
        let shown = if opts.context_prediction { forecast } else { Forecast::persistence(&state, forecast.horizon()) };
        let ctx = build_context(&opts.intersection_id, &state, &shown, candidate, head, &constraints);
        match reasoner.consult(t, &ctx) {
            Err(why) => record.fallback = Some(why),
            Ok(rec) => {
                if opts.safety_filter {
                    let out = filter(candidate, Some(&rec), head, &constraints);
                    record.final_command = out.final_command;
                    record.disposition = Some(out.disposition);
                    record.violated = out.violated;
                } else if let Some(cmd) = recommendation_command(&rec, head.current_phase) {
                    if executable(cmd, head, timing) {
                        record.final_command = cmd;
                    }
                }
                record.explanation_valid = Some(explanation_validity(&rec, &ctx));
                record.recommendation = Some(rec);
            }
        }
        record
    }
}

/// Simulate `cfg` under `kind`. Predictive controllers need `predictor`.
pub fn run_episode(
    cfg: &ScenarioConfig,
    kind: ControllerKind,
    opts: &EpisodeOptions,
    predictor: Option<&Predictor>,
) -> Result<RunLog> {
    opts.validate()?;
    if kind.needs_predictor() && predictor.is_none() {
        return Err(Error::Config(format!("controller {kind} needs trained predictor weights")));
    }
    let mut sim = Simulator::new(cfg.clone(), opts.params, opts.timing)?;
    let capacity = predictor.map_or(HISTORY_LEN, |p| p.history.max(2));
    let mut history = StateHistory::new(capacity, SAMPLE_INTERVAL);
    let reasoner = (kind == ControllerKind::LlmAugmented).then(|| Reasoner::new(opts.backend.build(), opts.call_budget));
    let backend = reasoner.as_ref().map(|r| r.backend_name().to_string());
    let mut decider = Decider { cfg, kind, opts, predictor: predictor.filter(|_| kind.needs_predictor()), reasoner };

    let duration = cfg.duration;
    let mut steps = Vec::with_capacity(duration as usize);
    let mut snapshots = Vec::with_capacity((duration / SAMPLE_INTERVAL + 1) as usize);
    let mut decisions = Vec::new();
    let mut next_decision = opts.timing.min_green;

    for t in 0..duration {
        let lanes = sim.observe();
        let head = *sim.signal();
        if t % SAMPLE_INTERVAL == 0 {
            let s = aggregate_observation(t, &lanes, &head);
            history.push(s.clone())?;
            snapshots.push(s);
        }
        let mut cmd = SignalCommand::Hold;
        if head.is_green() && t >= next_decision {
            let mut record = decider.decide(t, &lanes, &head, &history);
            cmd = record.final_command;
            let span = decision_span(cmd, &head, &opts.timing, opts.controller.decision_interval);
            record.expected_violation = breaks_timing(cmd, &head, &opts.timing, span.min(duration - t));
            next_decision = t + span;
            decisions.push(record);
        }
        steps.push(sim.step(cmd)?);
    }

    let timeline: Vec<(Interval, PhaseId)> = steps.iter().map(|s| (s.signal.interval, s.signal.phase)).collect();
    let times: Vec<u32> = decisions.iter().map(|d| d.time).collect();
    let report = audit(&timeline, &times, &opts.timing)?;
    for v in &report.violations {
        if let Some(d) = v.decision_time {
            if let Ok(i) = times.binary_search(&d) {
                decisions[i].audited_violation = true;
            }
        }
    }

    Ok(RunLog {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        duration,
        controller: kind,
        timing: opts.timing,
        safety_filter: opts.safety_filter,
        context_prediction: opts.context_prediction,
        backend,
        steps,
        decisions,
        snapshots,
        exchanges: decider.reasoner.map(Reasoner::into_exchanges).unwrap_or_default(),
        audit: report,
    })
}
