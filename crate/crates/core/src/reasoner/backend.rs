//! Backends that answer a decision context with recommendation text, and the
//! per-run wrapper that budgets calls and logs every exchange.

use std::cmp::Ordering;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{parse_and_validate, ActionName, DecisionContext, Recommendation, RiskFlag, SchemaFailure};
use crate::error::{Error, Result};
use crate::sim::{DirectionGroup, LaneKind, PhaseId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "failure", content = "detail", rename_all = "snake_case")]
pub enum BackendFailure {
    Timeout,
    Transport(String),
    Status(u16),
    EmptyBody,
    BudgetExhausted,
}

impl fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendFailure::Timeout => f.write_str("timeout"),
            BackendFailure::Transport(e) => write!(f, "transport: {e}"),
            BackendFailure::Status(s) => write!(f, "http status {s}"),
            BackendFailure::EmptyBody => f.write_str("empty body"),
            BackendFailure::BudgetExhausted => f.write_str("call budget exhausted"),
        }
    }
}

pub trait ReasonerBackend: Send {
    fn name(&self) -> &str;
    fn evaluate(&mut self, ctx: &DecisionContext) -> std::result::Result<String, BackendFailure>;
}

/// Deterministic rule-based stand-in for a language model.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicBackend;

const HIGH_RISK_QUEUE: u32 = 32;
const MEDIUM_RISK_QUEUE: u32 = 20;

fn phase_phrase(p: PhaseId) -> String {
    match p.lane_kind() {
        LaneKind::Through => format!("{} ({} through movements)", p.name(), p.group().label()),
        LaneKind::Left => format!("{} ({} left turns)", p.name(), p.group().label()),
    }
}

pub fn heuristic_recommendation(ctx: &DecisionContext) -> Recommendation {
    let pred = &ctx.predicted_state_next_60s;
    let now = &ctx.current_state;
    let candidate = ctx.candidate_action_from_lstm;
    let candidate_group = candidate.phase().group();
    // Load = vehicles queued now plus vehicles forecast a minute out.
    let load = |g: DirectionGroup| pred.group_queue(g) + now.group_queue(g);
    let dominant = match load(DirectionGroup::NorthSouth).cmp(&load(DirectionGroup::EastWest)) {
        Ordering::Greater => DirectionGroup::NorthSouth,
        Ordering::Less => DirectionGroup::EastWest,
        Ordering::Equal => candidate_group,
    };
    let accept = dominant == candidate_group;
    let action = if accept {
        candidate
    } else if ctx.current_phase == dominant.through_phase() {
        ActionName::Extend(ctx.current_phase)
    } else {
        ActionName::Switch(dominant.through_phase())
    };
    let predicted = pred.dominant_group().unwrap_or(dominant);

    let c = &ctx.constraints;
    let peak = pred.max_queue();
    let duration = ((f64::from(peak) / 3.0).round() as u32).clamp(c.min_green, c.max_green.max(c.min_green));
    let risk_flag = if peak > HIGH_RISK_QUEUE {
        RiskFlag::High
    } else if peak > MEDIUM_RISK_QUEUE {
        RiskFlag::Medium
    } else {
        RiskFlag::Low
    };

    let other = predicted.other();
    let (dq, oq) = (pred.group_queue(predicted), pred.group_queue(other));
    let current = now.group_queue(predicted);
    let trend = if dq > current { "increasing" } else if dq < current { "decreasing" } else { "steady" };
    let congestion_diagnosis = format!(
        "The {} approaches show {trend} queue length and waiting time ({dq} vehicles predicted against {oq} on the {} approaches).",
        predicted.label(),
        other.label()
    );
    let comparison = if dq > oq { "higher than" } else { "comparable to" };
    let action_text = match action {
        ActionName::Extend(p) if p == ctx.current_phase => format!(
            "Extending the current phase {} by {duration} s serves the heavier demand without exceeding the maximum green time.",
            phase_phrase(p)
        ),
        ActionName::Extend(p) => format!("Extending {} by {duration} s serves the heavier demand.", phase_phrase(p)),
        ActionName::Switch(p) => format!("Switching to {} serves the heavier demand after the yellow interval.", phase_phrase(p)),
    };
    let load_text = if dominant == predicted {
        String::new()
    } else {
        format!(
            " Counting the vehicles already queued, the {} approaches carry more load ({} against {}).",
            dominant.label(),
            load(dominant),
            load(predicted)
        )
    };
    let explanation = format!(
        "The predicted queue and waiting time on the {} approaches are {comparison} those on the {} approaches.{load_text} {action_text}",
        predicted.label(),
        other.label()
    );
    let room = c.max_green.saturating_sub(ctx.elapsed_green_time);
    let safety_check = match action {
        ActionName::Extend(_) if duration > room => {
            format!("Requested {duration} s exceeds the {room} s left before maximum green; the extension must be shortened.")
        }
        ActionName::Switch(_) if ctx.elapsed_green_time < c.min_green => {
            "Minimum green not yet served; the switch must wait.".to_string()
        }
        _ if c.emergency_vehicle => "Emergency vehicle present; priority rules apply.".to_string(),
        _ if c.pedestrian_request => "Pedestrian request active; phase order must be kept.".to_string(),
        _ => "No constraint violation detected.".to_string(),
    };
    Recommendation {
        accept_candidate_action: accept,
        recommended_action: action,
        recommended_duration: duration,
        congestion_diagnosis,
        risk_flag,
        safety_check,
        explanation,
    }
}

impl ReasonerBackend for HeuristicBackend {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn evaluate(&mut self, ctx: &DecisionContext) -> std::result::Result<String, BackendFailure> {
        Ok(serde_json::to_string_pretty(&heuristic_recommendation(ctx)).expect("recommendation serializes"))
    }
}

/// Always asks for a long extension of the current phase. Used to exercise the filter and the auditor.
#[derive(Clone, Copy, Debug)]
pub struct FaultyBackend {
    pub duration: u32,
}

impl ReasonerBackend for FaultyBackend {
    fn name(&self) -> &str {
        "faulty"
    }

    fn evaluate(&mut self, ctx: &DecisionContext) -> std::result::Result<String, BackendFailure> {
        let mut rec = heuristic_recommendation(ctx);
        rec.recommended_action = ActionName::Extend(ctx.current_phase);
        rec.recommended_duration = self.duration;
        rec.accept_candidate_action = ctx.candidate_action_from_lstm == rec.recommended_action;
        Ok(serde_json::to_string(&rec).expect("recommendation serializes"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    Timeout,
    ServerError,
    Garbage,
}

/// Fails every call in one fixed way, without touching the network.
#[derive(Clone, Copy, Debug)]
pub struct FailingBackend {
    pub mode: FailureMode,
}

impl ReasonerBackend for FailingBackend {
    fn name(&self) -> &str {
        "failing"
    }

    fn evaluate(&mut self, _ctx: &DecisionContext) -> std::result::Result<String, BackendFailure> {
        match self.mode {
            FailureMode::Timeout => Err(BackendFailure::Timeout),
            FailureMode::ServerError => Err(BackendFailure::Status(500)),
            FailureMode::Garbage => Ok("<html><body>upstream unavailable</body></html>".to_string()),
        }
    }
}

pub const SYSTEM_PROMPT: &str = "You are a traffic signal decision-support assistant for a single four-arm intersection \
with phases NS_Green, EW_Green, NS_Left and EW_Left. You receive a JSON document with the current phase, \
elapsed green time, current and predicted per-approach queues and waiting times, the candidate action from a \
predictive controller, and the timing constraints. Evaluate whether the candidate action is reasonable, diagnose \
the congestion pattern, recommend whether to accept or adjust it, and explain your reasoning. Reply with exactly one \
JSON object with these fields: accept_candidate_action (boolean), recommended_action (Extend_<phase> or \
Switch_<phase>), recommended_duration (integer seconds), congestion_diagnosis (string), risk_flag (low, medium or \
high), safety_check (string), explanation (string). Do not add any other text.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    5000
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), api_key: None, model: None, timeout_ms: default_timeout_ms() }
    }

    /// Fill unset fields from `SIGLAB_REASONER_URL`, `_API_KEY`, `_MODEL` and `_TIMEOUT_MS`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("SIGLAB_REASONER_URL").ok()?;
        let mut cfg = Self::new(url);
        cfg.api_key = std::env::var("SIGLAB_REASONER_API_KEY").ok();
        cfg.model = std::env::var("SIGLAB_REASONER_MODEL").ok();
        if let Some(ms) = std::env::var("SIGLAB_REASONER_TIMEOUT_MS").ok().and_then(|v| v.parse().ok()) {
            cfg.timeout_ms = ms;
        }
        Some(cfg)
    }
}

/// Chat-completions client for any OpenAI-compatible endpoint.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn request_body(&self, ctx: &DecisionContext) -> serde_json::Value {
        let mut body = json!({
            "temperature": 0,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": ctx.to_json_pretty()},
            ],
        });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        body
    }
}

fn classify(e: ureq::Error) -> BackendFailure {
    match e {
        ureq::Error::Timeout(_) => BackendFailure::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut || io.kind() == std::io::ErrorKind::WouldBlock => {
            BackendFailure::Timeout
        }
        other => BackendFailure::Transport(other.to_string()),
    }
}

impl ReasonerBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn evaluate(&mut self, ctx: &DecisionContext) -> std::result::Result<String, BackendFailure> {
        let body = self.request_body(ctx).to_string();
        let mut req = self.agent.post(&self.config.url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.as_bytes()).map_err(classify)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendFailure::Status(status));
        }
        let text = resp.body_mut().read_to_string().map_err(classify)?;
        if text.trim().is_empty() {
            return Err(BackendFailure::EmptyBody);
        }
        // Chat-completion envelope if present, otherwise the raw body.
        let content = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v.pointer("/choices/0/message/content").and_then(|c| c.as_str()).map(str::to_string));
        match content {
            Some(c) if c.trim().is_empty() => Err(BackendFailure::EmptyBody),
            Some(c) => Ok(c),
            None => Ok(text),
        }
    }
}

/// Serializable backend selection; each run builds its own instance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    Heuristic,
    Http(HttpConfig),
    Faulty { duration: u32 },
    Failing { mode: FailureMode },
}

impl BackendSpec {
    pub fn build(&self) -> Box<dyn ReasonerBackend> {
        match self {
            BackendSpec::Heuristic => Box::new(HeuristicBackend),
            BackendSpec::Http(cfg) => Box::new(HttpBackend::new(cfg.clone())),
            BackendSpec::Faulty { duration } => Box::new(FaultyBackend { duration: *duration }),
            BackendSpec::Failing { mode } => Box::new(FailingBackend { mode: *mode }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::Http(cfg) if cfg.url.trim().is_empty() => Err(Error::Config("http backend needs a url".into())),
            BackendSpec::Http(cfg) if cfg.timeout_ms == 0 => Err(Error::Config("http timeout must be > 0".into())),
            BackendSpec::Faulty { duration: 0 } => Err(Error::Config("faulty backend duration must be > 0".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExchangeOutcome {
    Valid { recommendation: Recommendation },
    SchemaFailure { failure: SchemaFailure },
    BackendFailure { failure: BackendFailure },
}

/// One logged call: what was sent, what came back, and how it was judged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub time: u32,
    pub backend: String,
    pub context: DecisionContext,
    pub raw: Option<String>,
    pub outcome: ExchangeOutcome,
}

/// A backend plus a call budget and an exchange log.
pub struct Reasoner {
    backend: Box<dyn ReasonerBackend>,
    budget: Option<usize>,
    calls: usize,
    exchanges: Vec<Exchange>,
}

impl Reasoner {
    pub fn new(backend: Box<dyn ReasonerBackend>, budget: Option<usize>) -> Self {
        Self { backend, budget, calls: 0, exchanges: Vec::new() }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn into_exchanges(self) -> Vec<Exchange> {
        self.exchanges
    }

    /// Ask for a recommendation; on any failure the reason is returned and the caller keeps its candidate.
    pub fn consult(&mut self, time: u32, ctx: &DecisionContext) -> std::result::Result<Recommendation, String> {
        let raw = if self.budget.is_some_and(|b| self.calls >= b) {
            Err(BackendFailure::BudgetExhausted)
        } else {
            self.calls += 1;
            self.backend.evaluate(ctx)
        };
        let (raw, outcome) = match raw {
            Err(failure) => (None, ExchangeOutcome::BackendFailure { failure }),
            Ok(text) => {
                let outcome = match parse_and_validate(&text) {
                    Ok(recommendation) => ExchangeOutcome::Valid { recommendation },
                    Err(failure) => ExchangeOutcome::SchemaFailure { failure },
                };
                (Some(text), outcome)
            }
        };
        let result = match &outcome {
            ExchangeOutcome::Valid { recommendation } => Ok(recommendation.clone()),
            ExchangeOutcome::SchemaFailure { failure } => Err(format!("schema: {failure}")),
            ExchangeOutcome::BackendFailure { failure } => Err(format!("backend: {failure}")),
        };
        self.exchanges.push(Exchange {
            time,
            backend: self.backend.name().to_string(),
            context: ctx.clone(),
            raw,
            outcome,
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{build_context, explanation_validity, QueueBlock};
    use super::*;
    use crate::safety::ConstraintSet;
    use crate::sim::SignalCommand;
    use proptest::prelude::*;

    #[test]
    fn heuristic_accepts_reference_candidate() {
        let rec = heuristic_recommendation(&reference_context());
        assert!(rec.accept_candidate_action);
        assert_eq!(rec.recommended_action, ActionName::Extend(PhaseId::NsGreen));
        assert_eq!(rec.recommended_duration, 10);
        assert_eq!(rec.risk_flag, RiskFlag::Medium);
        assert!(explanation_validity(&rec, &reference_context()));
    }

    #[test]
    fn heuristic_respects_candidate_on_ties() {
        let mut ctx = reference_context();
        ctx.predicted_state_next_60s = QueueBlock { north_queue: 10, south_queue: 10, east_queue: 10, west_queue: 10, ..Default::default() };
        ctx.current_state = ctx.predicted_state_next_60s;
        ctx.candidate_action_from_lstm = ActionName::Switch(PhaseId::EwLeft);
        let rec = heuristic_recommendation(&ctx);
        assert!(rec.accept_candidate_action);
        assert_eq!(rec.recommended_action, ActionName::Switch(PhaseId::EwLeft));
    }

    #[test]
    fn queued_vehicles_outweigh_a_small_forecast_lead() {
        let mut ctx = reference_context();
        // forecast leans east-west by 4, but 19 more vehicles wait north-south now
        ctx.predicted_state_next_60s = QueueBlock { north_queue: 6, south_queue: 6, east_queue: 8, west_queue: 8, ..Default::default() };
        ctx.candidate_action_from_lstm = ActionName::Switch(PhaseId::EwGreen);
        let rec = heuristic_recommendation(&ctx);
        assert!(!rec.accept_candidate_action);
        assert_eq!(rec.recommended_action, ActionName::Extend(PhaseId::NsGreen));
        assert!(rec.congestion_diagnosis.starts_with("The east-west approaches"));
        assert!(rec.explanation.contains("already queued, the north-south approaches carry more load (46 against 31)"));
        assert!(explanation_validity(&rec, &ctx));
    }

    #[test]
    fn heuristic_risk_levels() {
        let mut ctx = reference_context();
        ctx.predicted_state_next_60s.north_queue = 35;
        assert_eq!(heuristic_recommendation(&ctx).risk_flag, RiskFlag::High);
        ctx.predicted_state_next_60s = QueueBlock { north_queue: 3, east_queue: 2, ..Default::default() };
        assert_eq!(heuristic_recommendation(&ctx).risk_flag, RiskFlag::Low);
    }

    #[test]
    fn heuristic_redirects_to_dominant_group() {
        let mut ctx = reference_context();
        ctx.candidate_action_from_lstm = ActionName::Switch(PhaseId::EwGreen);
        let rec = heuristic_recommendation(&ctx);
        assert!(!rec.accept_candidate_action);
        assert_eq!(rec.recommended_action, ActionName::Extend(PhaseId::NsGreen));
        ctx.current_phase = PhaseId::EwLeft;
        let rec = heuristic_recommendation(&ctx);
        assert_eq!(rec.recommended_action, ActionName::Switch(PhaseId::NsGreen));
        assert!(explanation_validity(&rec, &ctx));
    }

    #[test]
    fn reasoner_logs_every_failure_once() {
        for mode in [FailureMode::Timeout, FailureMode::ServerError, FailureMode::Garbage] {
            let mut r = Reasoner::new(Box::new(FailingBackend { mode }), None);
            assert!(r.consult(10, &reference_context()).is_err());
            assert_eq!(r.exchanges().len(), 1);
            assert!(!matches!(r.exchanges()[0].outcome, ExchangeOutcome::Valid { .. }));
        }
    }

    #[test]
    fn budget_is_enforced() {
        let mut r = Reasoner::new(Box::new(HeuristicBackend), Some(1));
        assert!(r.consult(10, &reference_context()).is_ok());
        let err = r.consult(20, &reference_context()).unwrap_err();
        assert!(err.contains("budget"));
        assert_eq!(r.calls(), 1);
        assert_eq!(r.exchanges().len(), 2);
    }

    #[test]
    fn faulty_backend_requests_sixty_seconds() {
        let mut r = Reasoner::new(BackendSpec::Faulty { duration: 60 }.build(), None);
        let rec = r.consult(0, &reference_context()).unwrap();
        assert_eq!(rec.recommended_action, ActionName::Extend(PhaseId::NsGreen));
        assert_eq!(rec.recommended_duration, 60);
    }

    #[test]
    fn http_key_is_not_serialized() {
        let mut cfg = HttpConfig::new("http://localhost:1/v1/chat/completions");
        cfg.api_key = Some("secret".into());
        let text = serde_json::to_string(&BackendSpec::Http(cfg)).unwrap();
        assert!(!text.contains("secret"));
    }

    fn arb_block() -> impl Strategy<Value = QueueBlock> {
        (prop::array::uniform4(0u32..60), prop::array::uniform4(0u32..900)).prop_map(|(q, w)| QueueBlock {
            north_queue: q[0],
            south_queue: q[1],
            east_queue: q[2],
            west_queue: q[3],
            north_waiting_time: w[0],
            south_waiting_time: w[1],
            east_waiting_time: w[2],
            west_waiting_time: w[3],
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn heuristic_output_always_validates(
            cur in arb_block(), pred in arb_block(), phase in 0usize..4, cand in 0usize..4, ext in any::<bool>(),
            elapsed in 0u32..60, ped in any::<bool>(), emg in any::<bool>(),
        ) {
            let mut ctx = build_context(
                "I1", &reference_state(), &reference_forecast(), SignalCommand::Hold,
                &crate::sim::SignalHead::green(PhaseId::ALL[phase], elapsed), &ConstraintSet::default(),
            );
            ctx.current_state = cur;
            ctx.predicted_state_next_60s = pred;
            ctx.candidate_action_from_lstm = if ext { ActionName::Extend(PhaseId::ALL[cand]) } else { ActionName::Switch(PhaseId::ALL[cand]) };
            ctx.constraints.pedestrian_request = ped;
            ctx.constraints.emergency_vehicle = emg;
            let raw = HeuristicBackend.evaluate(&ctx).unwrap();
            let rec = parse_and_validate(&raw).unwrap();
            prop_assert_eq!(&rec, &heuristic_recommendation(&ctx));
            prop_assert!(explanation_validity(&rec, &ctx));
        }
    }
}
