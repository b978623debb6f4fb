//! The four signal-control policies. Each is a pure function of the
//! observation available at a decision point; the episode runner owns timing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::Forecast;
use crate::sim::{ApproachId, LaneFeatures, LaneId, LaneKind, PerApproach, PhaseId, SignalCommand, SignalHead, SignalTiming};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    FixedTime,
    RuleBased,
    LstmPredictive,
    LlmAugmented,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::FixedTime,
        ControllerKind::RuleBased,
        ControllerKind::LstmPredictive,
        ControllerKind::LlmAugmented,
    ];

    pub fn needs_predictor(self) -> bool {
        matches!(self, ControllerKind::LstmPredictive | ControllerKind::LlmAugmented)
    }

    /// Identifier used on the command line and in file names.
    pub fn id(self) -> &'static str {
        match self {
            ControllerKind::FixedTime => "fixed_time",
            ControllerKind::RuleBased => "rule_based",
            ControllerKind::LstmPredictive => "lstm_predictive",
            ControllerKind::LlmAugmented => "llm_augmented",
        }
    }

    /// Label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::FixedTime => "Fixed-Time",
            ControllerKind::RuleBased => "Rule-Based",
            ControllerKind::LstmPredictive => "LSTM-Predictive",
            ControllerKind::LlmAugmented => "LLM-Augmented LSTM",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for DemandWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, gamma: 10.0 }
    }
}

impl DemandWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::Config(format!("demand weights {w:?} must be >= 0 and not all zero")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub decision_interval: u32,
    pub weights: DemandWeights,
    /// Served-lane queue (vehicles) that keeps the actuated controller extending.
    pub actuated_queue_threshold: f64,
    /// Fixed-time green budgets in cycle order NS_Green, NS_Left, EW_Green, EW_Left.
    pub fixed_time_greens: [u32; 4],
    /// Left-lane share used when no observed split is available.
    pub left_turn_fraction: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            decision_interval: 10,
            weights: DemandWeights::default(),
            actuated_queue_threshold: 3.0,
            fixed_time_greens: [30, 15, 30, 15],
            left_turn_fraction: 0.25,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decision_interval == 0 {
            return Err(Error::Config("decision_interval must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.left_turn_fraction) {
            return Err(Error::Config(format!("left_turn_fraction {} outside [0, 1]", self.left_turn_fraction)));
        }
        self.weights.validate()
    }
}

/// Fixed-time cycle order.
pub const FIXED_CYCLE: [PhaseId; 4] = [PhaseId::NsGreen, PhaseId::NsLeft, PhaseId::EwGreen, PhaseId::EwLeft];

/// Length of one fixed-time cycle including yellows.
pub fn fixed_cycle_length(config: &ControllerConfig, timing: &SignalTiming) -> u32 {
    config.fixed_time_greens.iter().map(|g| g + timing.yellow).sum()
}

pub fn fixed_time_decide(signal: &SignalHead, config: &ControllerConfig) -> SignalCommand {
    let pos = FIXED_CYCLE.iter().position(|&p| p == signal.current_phase).unwrap_or(0);
    let budget = config.fixed_time_greens[pos];
    let elapsed = signal.elapsed_green;
    if elapsed >= budget {
        return SignalCommand::switch(FIXED_CYCLE[(pos + 1) % FIXED_CYCLE.len()]);
    }
    let remaining = budget - elapsed;
    if remaining >= config.decision_interval {
        SignalCommand::Hold
    } else {
        SignalCommand::extend(remaining)
    }
}

/// Summed queue on the lanes the current phase serves.
pub fn served_queue(lanes: &[LaneFeatures; 8], phase: PhaseId) -> f64 {
    phase.served().iter().map(|l| lanes[l.index()].queue).sum()
}

pub fn rule_based_decide(lanes: &[LaneFeatures; 8], signal: &SignalHead, config: &ControllerConfig, timing: &SignalTiming) -> SignalCommand {
    let elapsed = signal.elapsed_green;
    let current = signal.current_phase;
    if served_queue(lanes, current) >= config.actuated_queue_threshold && elapsed < timing.max_green {
        return SignalCommand::extend(config.decision_interval.min(timing.max_green - elapsed));
    }
    if elapsed < timing.min_green {
        SignalCommand::Hold
    } else {
        SignalCommand::switch(current.next_round_robin())
    }
}

/// Fraction of each approach's demand assigned to its through and left lanes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneShares {
    /// Left-lane share per approach; the through lane gets the rest.
    pub left: PerApproach<f64>,
}

impl LaneShares {
    pub fn from_left_fraction(f: f64) -> Self {
        Self { left: PerApproach::from_fn(|_| f) }
    }

    /// Shares from the current lane queues, falling back to `default_left` on approaches with no queue.
    pub fn observed(lanes: &[LaneFeatures; 8], default_left: f64) -> Self {
        Self {
            left: PerApproach::from_fn(|a| {
                let th = lanes[LaneId::new(a, LaneKind::Through).index()].queue;
                let lt = lanes[LaneId::new(a, LaneKind::Left).index()].queue;
                if th + lt > 0.0 {
                    lt / (th + lt)
                } else {
                    default_left
                }
            }),
        }
    }

    pub fn share(&self, lane: LaneId) -> f64 {
        match lane.kind {
            LaneKind::Left => self.left[lane.approach],
            LaneKind::Through => 1.0 - self.left[lane.approach],
        }
    }
}

/// Predicted demand of one phase: weighted horizon-mean queue, wait and occupancy on its lanes.
pub fn demand_score(forecast: &Forecast, phase: PhaseId, weights: &DemandWeights, shares: &LaneShares) -> f64 {
    let q = forecast.mean_over_horizon(|f| f.queue);
    let w = forecast.mean_over_horizon(|f| f.wait);
    let o = forecast.mean_over_horizon(|f| f.occupancy);
    phase
        .served()
        .iter()
        .map(|&lane| {
            let a: ApproachId = lane.approach;
            shares.share(lane) * (weights.alpha * q[a] + weights.beta * w[a] + weights.gamma * o[a])
        })
        .sum()
}

pub fn demand_scores(forecast: &Forecast, weights: &DemandWeights, shares: &LaneShares) -> [f64; 4] {
    PhaseId::ALL.map(|p| demand_score(forecast, p, weights, shares))
}

/// Highest-scoring phase; earlier phases win ties.
pub fn argmax_phase(scores: &[f64; 4], exclude: Option<PhaseId>) -> PhaseId {
    let mut best: Option<PhaseId> = None;
    for p in PhaseId::ALL {
        if Some(p) == exclude {
            continue;
        }
        if best.is_none_or(|b| scores[p.index()] > scores[b.index()]) {
            best = Some(p);
        }
    }
    best.expect("at least one phase remains")
}

pub fn lstm_predictive_decide(scores: &[f64; 4], signal: &SignalHead, config: &ControllerConfig, timing: &SignalTiming) -> SignalCommand {
    let current = signal.current_phase;
    let elapsed = signal.elapsed_green;
    let best = argmax_phase(scores, None);
    if best == current {
        let room = timing.max_green.saturating_sub(elapsed);
        if room > 0 {
            return SignalCommand::extend(config.decision_interval.min(room));
        }
        return SignalCommand::switch(argmax_phase(scores, Some(current)));
    }
    if elapsed < timing.min_green {
        SignalCommand::Hold
    } else {
        SignalCommand::switch(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ApproachFeatures;
    use proptest::prelude::*;

    fn forecast_with_queues(q: [f64; 4]) -> Forecast {
        let step = PerApproach::from_fn(|a| ApproachFeatures { queue: q[a.index()], ..Default::default() });
        Forecast { steps: vec![step; 6] }
    }

    fn queue_only() -> DemandWeights {
        DemandWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 }
    }

    #[test]
    fn fixed_time_cycle() {
        let c = ControllerConfig::default();
        assert_eq!(fixed_time_decide(&SignalHead::green(PhaseId::NsGreen, 20), &c), SignalCommand::Hold);
        assert_eq!(fixed_time_decide(&SignalHead::green(PhaseId::NsGreen, 30), &c), SignalCommand::switch(PhaseId::NsLeft));
        assert_eq!(fixed_time_decide(&SignalHead::green(PhaseId::NsLeft, 10), &c), SignalCommand::extend(5));
        assert_eq!(fixed_time_decide(&SignalHead::green(PhaseId::NsLeft, 15), &c), SignalCommand::switch(PhaseId::EwGreen));
        assert_eq!(fixed_time_decide(&SignalHead::green(PhaseId::EwLeft, 15), &c), SignalCommand::switch(PhaseId::NsGreen));
        assert_eq!(fixed_cycle_length(&c, &SignalTiming::default()), 102);
    }

    fn lanes_with_served(phase: PhaseId, q: f64) -> [LaneFeatures; 8] {
        let mut lanes = [LaneFeatures::default(); 8];
        lanes[phase.served()[0].index()].queue = q;
        lanes
    }

    #[test]
    fn rule_based_examples() {
        let c = ControllerConfig::default();
        let t = SignalTiming::default();
        let head = SignalHead::green(PhaseId::NsGreen, 20);
        assert_eq!(rule_based_decide(&lanes_with_served(PhaseId::NsGreen, 5.0), &head, &c, &t), SignalCommand::extend(10));
        assert_eq!(rule_based_decide(&lanes_with_served(PhaseId::NsGreen, 0.0), &head, &c, &t), SignalCommand::switch(PhaseId::EwGreen));
        let head = SignalHead::green(PhaseId::NsGreen, 45);
        assert_eq!(rule_based_decide(&lanes_with_served(PhaseId::NsGreen, 9.0), &head, &c, &t), SignalCommand::switch(PhaseId::EwGreen));
        // Unserved queue does not count.
        let head = SignalHead::green(PhaseId::NsGreen, 20);
        assert_eq!(rule_based_decide(&lanes_with_served(PhaseId::EwGreen, 9.0), &head, &c, &t), SignalCommand::switch(PhaseId::EwGreen));
        // Extension capped at max green.
        let head = SignalHead::green(PhaseId::NsGreen, 40);
        assert_eq!(rule_based_decide(&lanes_with_served(PhaseId::NsGreen, 9.0), &head, &c, &t), SignalCommand::extend(5));
    }

    #[test]
    fn demand_score_hand_example() {
        let f = forecast_with_queues([24.0, 27.0, 10.0, 9.0]);
        let shares = LaneShares::from_left_fraction(0.25);
        assert!((demand_score(&f, PhaseId::NsGreen, &queue_only(), &shares) - 38.25).abs() < 1e-12);
        assert!((demand_score(&f, PhaseId::NsLeft, &queue_only(), &shares) - 12.75).abs() < 1e-12);
        let zero = forecast_with_queues([0.0; 4]);
        assert_eq!(demand_scores(&zero, &DemandWeights::default(), &shares), [0.0; 4]);
    }

    #[test]
    fn observed_shares_follow_lane_queues() {
        let mut lanes = [LaneFeatures::default(); 8];
        lanes[LaneId::new(ApproachId::North, LaneKind::Through).index()].queue = 1.0;
        lanes[LaneId::new(ApproachId::North, LaneKind::Left).index()].queue = 3.0;
        let s = LaneShares::observed(&lanes, 0.25);
        assert_eq!(s.left.north, 0.75);
        assert_eq!(s.left.east, 0.25);
    }

    #[test]
    fn predictive_examples() {
        let c = ControllerConfig::default();
        let t = SignalTiming::default();
        let shares = LaneShares::from_left_fraction(0.25);
        let scores = demand_scores(&forecast_with_queues([24.0, 27.0, 10.0, 9.0]), &DemandWeights::default(), &shares);
        let head = SignalHead::green(PhaseId::NsGreen, 25);
        assert_eq!(lstm_predictive_decide(&scores, &head, &c, &t), SignalCommand::extend(10));
        assert_eq!(argmax_phase(&[1.0; 4], None), PhaseId::NsGreen);
        let ew = demand_scores(&forecast_with_queues([0.0, 0.0, 20.0, 20.0]), &DemandWeights::default(), &shares);
        assert_eq!(lstm_predictive_decide(&ew, &SignalHead::green(PhaseId::NsGreen, 6), &c, &t), SignalCommand::Hold);
        assert_eq!(lstm_predictive_decide(&ew, &SignalHead::green(PhaseId::NsGreen, 12), &c, &t), SignalCommand::switch(PhaseId::EwGreen));
        // At max green the best other phase is taken.
        assert_eq!(lstm_predictive_decide(&scores, &SignalHead::green(PhaseId::NsGreen, 45), &c, &t), SignalCommand::switch(PhaseId::EwGreen));
        assert_eq!(lstm_predictive_decide(&scores, &SignalHead::green(PhaseId::NsGreen, 40), &c, &t), SignalCommand::extend(5));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ControllerKind::ALL {
            assert_eq!(k.id().parse::<ControllerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.id()));
        }
        assert!("max_pressure".parse::<ControllerKind>().is_err());
    }

    proptest! {
        #[test]
        fn argmax_invariant_to_weight_scaling(
            q in prop::array::uniform4(0.0f64..40.0), w in prop::array::uniform4(0.0f64..200.0),
            o in prop::array::uniform4(0.0f64..1.2), c in 0.01f64..100.0,
        ) {
            let step = PerApproach::from_fn(|a| ApproachFeatures {
                queue: q[a.index()], wait: w[a.index()], occupancy: o[a.index()], ..Default::default()
            });
            let f = Forecast { steps: vec![step; 6] };
            let shares = LaneShares::from_left_fraction(0.25);
            let base = DemandWeights::default();
            let scaled = DemandWeights { alpha: base.alpha * c, beta: base.beta * c, gamma: base.gamma * c };
            let s1 = demand_scores(&f, &base, &shares);
            let s2 = demand_scores(&f, &scaled, &shares);
            for i in 0..4 {
                prop_assert!((s2[i] - c * s1[i]).abs() <= 1e-9 * (1.0 + s2[i].abs()));
            }
            // Ties are decided on exact values, so compare only when the top is unique.
            let top = s1.iter().cloned().fold(f64::MIN, f64::max);
            if s1.iter().filter(|s| (top - **s).abs() < 1e-6 * (1.0 + top)).count() == 1 {
                prop_assert_eq!(argmax_phase(&s1, None), argmax_phase(&s2, None));
            }
        }

        #[test]
        fn dominant_queues_win(served in 0usize..4, base in prop::array::uniform4(0.0f64..20.0), bump in 0.1f64..20.0) {
            // Perfect-foresight forecast: raising the served group's queues above every
            // other approach never leaves that group's through phase scored below an unserved one.
            let phase = [PhaseId::NsGreen, PhaseId::EwGreen][served % 2];
            let group = phase.group();
            let max_other = group.other().approaches().iter().map(|a| base[a.index()]).fold(0.0, f64::max);
            let mut q = base;
            for a in group.approaches() {
                q[a.index()] = max_other + bump;
            }
            let f = forecast_with_queues(q);
            let scores = demand_scores(&f, &queue_only(), &LaneShares::from_left_fraction(0.25));
            let other = group.other().through_phase();
            prop_assert!(scores[phase.index()] > scores[other.index()]);
        }
    }
}
