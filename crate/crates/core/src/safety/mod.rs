//! Constraint set and the safety filter that turns any recommendation into an executable, legal command.

mod audit;

use serde::{Deserialize, Serialize};

pub use audit::{audit, AuditReport, Violation, ViolationKind};

use crate::reasoner::{ActionName, Recommendation};
use crate::sim::{ApproachId, PhaseId, ScenarioConfig, SignalCommand, SignalHead, SignalTiming};

/// Timing bounds plus any pedestrian or emergency restriction currently in force.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub timing: SignalTiming,
    /// Phase bound to an active pedestrian call.
    pub pedestrian_phase: Option<PhaseId>,
    pub emergency_approach: Option<ApproachId>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self::new(SignalTiming::default())
    }
}

impl ConstraintSet {
    pub fn new(timing: SignalTiming) -> Self {
        Self { timing, pedestrian_phase: None, emergency_approach: None }
    }

    pub fn at(timing: SignalTiming, scenario: &ScenarioConfig, t: u32) -> Self {
        Self {
            timing,
            pedestrian_phase: scenario.pedestrian_at(t),
            emergency_approach: scenario.emergency_at(t),
        }
    }

    pub fn min_green(&self) -> u32 {
        self.timing.min_green
    }

    pub fn max_green(&self) -> u32 {
        self.timing.max_green
    }
}

/// `A_safe` for one decision point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllowedActions {
    /// Hold / Extend of the current phase permitted.
    pub keep: bool,
    /// Longest permitted extension in seconds (0 when `keep` is false).
    pub max_extension: u32,
    /// Permitted switch targets, in round-robin order from the current phase.
    pub switch_targets: Vec<PhaseId>,
}

impl AllowedActions {
    pub fn permits(&self, cmd: SignalCommand) -> bool {
        match cmd {
            SignalCommand::Hold => self.keep,
            SignalCommand::Extend { duration } => self.keep && duration > 0 && duration <= self.max_extension,
            SignalCommand::Switch { target } => self.switch_targets.contains(&target),
        }
    }
}

/// Phases in round-robin order starting after `from`.
fn round_robin_after(from: PhaseId) -> impl Iterator<Item = PhaseId> {
    let mut p = from;
    (0..3).map(move |_| {
        p = p.next_round_robin();
        p
    })
}

fn emergency_phase(approach: ApproachId) -> PhaseId {
    approach.group().through_phase()
}

pub fn allowed_actions(signal: &SignalHead, c: &ConstraintSet) -> AllowedActions {
    let current = signal.current_phase;
    if !signal.is_green() {
        return AllowedActions { keep: true, max_extension: 0, switch_targets: Vec::new() };
    }
    let elapsed = signal.elapsed_green;
    let (min, max) = (c.min_green(), c.max_green());
    let max_extension = max.saturating_sub(elapsed);
    if elapsed < min {
        return AllowedActions { keep: true, max_extension, switch_targets: Vec::new() };
    }
    let mut keep = elapsed < max;
    let mut targets: Vec<PhaseId> = round_robin_after(current).collect();

    // Timing constraints win over emergency priority: at max green the only
    // legal moves are switches, whichever phase the emergency needs.
    if let Some(approach) = c.emergency_approach {
        let needed = emergency_phase(approach);
        if needed == current {
            if keep {
                targets.clear();
            }
        } else {
            targets.retain(|&p| p == needed);
            keep = false;
        }
    }
    if let Some(bound) = c.pedestrian_phase {
        if bound != current {
            // No skipping the bound phase in cycle order.
            let reachable: Vec<PhaseId> = round_robin_after(current).take_while(|&p| p != bound).chain([bound]).collect();
            let restricted: Vec<PhaseId> = targets.iter().copied().filter(|p| reachable.contains(p)).collect();
            if !restricted.is_empty() || keep {
                targets = restricted;
            }
        }
    }
    if !keep && targets.is_empty() {
        targets = round_robin_after(current).collect();
    }
    AllowedActions { keep, max_extension: if keep { max_extension } else { 0 }, switch_targets: targets }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    AcceptedRecommendation,
    ClampedRecommendation,
    RejectedToCandidate,
    CandidatePassthrough,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    #[serde(rename = "final")]
    pub final_command: SignalCommand,
    pub disposition: Disposition,
    /// Constraints the recommendation violated before filtering.
    pub violated: Vec<String>,
    pub note: String,
}

/// Make a candidate legal, changing it as little as possible.
pub fn repair(candidate: SignalCommand, signal: &SignalHead, c: &ConstraintSet) -> SignalCommand {
    let allowed = allowed_actions(signal, c);
    if allowed.permits(candidate) {
        return candidate;
    }
    match candidate {
        SignalCommand::Extend { .. } if allowed.keep && allowed.max_extension > 0 => {
            SignalCommand::extend(allowed.max_extension)
        }
        SignalCommand::Switch { .. } | SignalCommand::Hold | SignalCommand::Extend { .. } => {
            if let Some(&target) = allowed.switch_targets.first() {
                SignalCommand::switch(target)
            } else {
                SignalCommand::Hold
            }
        }
    }
}

/// Translate a recommendation into a command against the current phase, if it names a coherent action.
pub fn recommendation_command(rec: &Recommendation, current: PhaseId) -> Option<SignalCommand> {
    match rec.recommended_action {
        ActionName::Extend(p) if p == current => Some(SignalCommand::extend(rec.recommended_duration)),
        ActionName::Switch(p) if p != current => Some(SignalCommand::switch(p)),
        _ => None,
    }
}

/// `a_final = S(a_candidate, r, C)`.
pub fn filter(candidate: SignalCommand, rec: Option<&Recommendation>, signal: &SignalHead, c: &ConstraintSet) -> FilterOutcome {
    let repaired = repair(candidate, signal, c);
    let note = if repaired != candidate { format!("candidate {candidate} repaired to {repaired}") } else { String::new() };
    let Some(rec) = rec else {
        return FilterOutcome { final_command: repaired, disposition: Disposition::CandidatePassthrough, violated: vec![], note };
    };
    let reject = |violated: Vec<String>, why: String| FilterOutcome {
        final_command: repaired,
        disposition: Disposition::RejectedToCandidate,
        violated,
        note: why,
    };
    let allowed = allowed_actions(signal, c);
    let Some(cmd) = recommendation_command(rec, signal.current_phase) else {
        return reject(
            vec!["phase_consistency".into()],
            format!("{} is not executable from {}", rec.recommended_action, signal.current_phase),
        );
    };
    if allowed.permits(cmd) {
        return FilterOutcome { final_command: cmd, disposition: Disposition::AcceptedRecommendation, violated: vec![], note };
    }
    match cmd {
        SignalCommand::Extend { duration } if allowed.keep && allowed.max_extension > 0 => FilterOutcome {
            final_command: SignalCommand::extend(allowed.max_extension),
            disposition: Disposition::ClampedRecommendation,
            violated: vec!["max_green".into()],
            note: format!("extension {duration}s clamped to {}s", allowed.max_extension),
        },
        SignalCommand::Extend { .. } => {
            let mut why = vec!["max_green".to_string()];
            if c.emergency_approach.is_some() {
                why.push("emergency_vehicle".into());
            }
            reject(why, "extension not permitted".into())
        }
        SignalCommand::Switch { target } => {
            let why = if signal.elapsed_green < c.min_green() {
                "min_green"
            } else if c.emergency_approach.is_some() {
                "emergency_vehicle"
            } else {
                "pedestrian_request"
            };
            reject(vec![why.into()], format!("switch to {target} not permitted"))
        }
        SignalCommand::Hold => reject(vec!["max_green".into()], "hold not permitted".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::RiskFlag;
    use proptest::prelude::*;

    fn rec(action: ActionName, duration: u32) -> Recommendation {
        Recommendation {
            accept_candidate_action: true,
            recommended_action: action,
            recommended_duration: duration,
            congestion_diagnosis: "north-south".into(),
            risk_flag: RiskFlag::Low,
            safety_check: "ok".into(),
            explanation: "x".into(),
        }
    }

    #[test]
    fn min_green_allows_only_keeping() {
        let a = allowed_actions(&SignalHead::green(PhaseId::NsGreen, 4), &ConstraintSet::default());
        assert!(a.keep);
        assert!(a.switch_targets.is_empty());
        assert!(a.permits(SignalCommand::Hold));
        assert!(a.permits(SignalCommand::extend(10)));
        assert!(!a.permits(SignalCommand::switch(PhaseId::EwGreen)));
    }

    #[test]
    fn max_green_allows_only_switches() {
        let a = allowed_actions(&SignalHead::green(PhaseId::NsGreen, 45), &ConstraintSet::default());
        assert!(!a.keep);
        assert_eq!(a.switch_targets, vec![PhaseId::EwGreen, PhaseId::NsLeft, PhaseId::EwLeft]);
    }

    #[test]
    fn emergency_forces_serving_phase() {
        let c = ConstraintSet { emergency_approach: Some(ApproachId::North), ..Default::default() };
        let a = allowed_actions(&SignalHead::green(PhaseId::EwGreen, 12), &c);
        assert!(!a.keep);
        assert_eq!(a.switch_targets, vec![PhaseId::NsGreen]);
        // already serving: keep only
        let a = allowed_actions(&SignalHead::green(PhaseId::NsGreen, 12), &c);
        assert!(a.keep && a.switch_targets.is_empty());
        // but max green still wins
        let a = allowed_actions(&SignalHead::green(PhaseId::NsGreen, 45), &c);
        assert!(!a.keep && !a.switch_targets.is_empty());
    }

    #[test]
    fn pedestrian_call_forbids_skipping() {
        let c = ConstraintSet { pedestrian_phase: Some(PhaseId::EwGreen), ..Default::default() };
        let a = allowed_actions(&SignalHead::green(PhaseId::NsGreen, 20), &c);
        assert_eq!(a.switch_targets, vec![PhaseId::EwGreen]);
        let c = ConstraintSet { pedestrian_phase: Some(PhaseId::EwLeft), ..Default::default() };
        let a = allowed_actions(&SignalHead::green(PhaseId::NsGreen, 20), &c);
        assert_eq!(a.switch_targets, vec![PhaseId::EwGreen, PhaseId::NsLeft, PhaseId::EwLeft]);
    }

    #[test]
    fn reference_recommendation_is_accepted() {
        let out = filter(
            SignalCommand::extend(10),
            Some(&rec(ActionName::Extend(PhaseId::NsGreen), 10)),
            &SignalHead::green(PhaseId::NsGreen, 25),
            &ConstraintSet::default(),
        );
        assert_eq!(out.disposition, Disposition::AcceptedRecommendation);
        assert_eq!(out.final_command, SignalCommand::extend(10));
        assert!(out.violated.is_empty());
    }

    #[test]
    fn long_extension_is_clamped() {
        let out = filter(
            SignalCommand::extend(5),
            Some(&rec(ActionName::Extend(PhaseId::NsGreen), 30)),
            &SignalHead::green(PhaseId::NsGreen, 40),
            &ConstraintSet::default(),
        );
        assert_eq!(out.disposition, Disposition::ClampedRecommendation);
        assert_eq!(out.final_command, SignalCommand::extend(5));
        assert_eq!(out.violated, vec!["max_green".to_string()]);
    }

    #[test]
    fn skipping_pedestrian_phase_falls_back() {
        let c = ConstraintSet { pedestrian_phase: Some(PhaseId::EwGreen), ..Default::default() };
        let out = filter(
            SignalCommand::switch(PhaseId::EwGreen),
            Some(&rec(ActionName::Switch(PhaseId::NsLeft), 15)),
            &SignalHead::green(PhaseId::NsGreen, 20),
            &c,
        );
        assert_eq!(out.disposition, Disposition::RejectedToCandidate);
        assert_eq!(out.final_command, SignalCommand::switch(PhaseId::EwGreen));
        assert_eq!(out.violated, vec!["pedestrian_request".to_string()]);
    }

    #[test]
    fn incoherent_action_falls_back() {
        let out = filter(
            SignalCommand::extend(10),
            Some(&rec(ActionName::Switch(PhaseId::NsGreen), 15)),
            &SignalHead::green(PhaseId::NsGreen, 20),
            &ConstraintSet::default(),
        );
        assert_eq!(out.disposition, Disposition::RejectedToCandidate);
        assert_eq!(out.final_command, SignalCommand::extend(10));
    }

    #[test]
    fn illegal_candidate_is_repaired() {
        let head = SignalHead::green(PhaseId::NsGreen, 5);
        let c = ConstraintSet::default();
        assert_eq!(repair(SignalCommand::switch(PhaseId::EwGreen), &head, &c), SignalCommand::Hold);
        let head = SignalHead::green(PhaseId::NsGreen, 45);
        assert_eq!(repair(SignalCommand::extend(10), &head, &c), SignalCommand::switch(PhaseId::EwGreen));
        let head = SignalHead::green(PhaseId::NsGreen, 40);
        assert_eq!(repair(SignalCommand::extend(10), &head, &c), SignalCommand::extend(5));
    }

    fn arb_command() -> impl Strategy<Value = SignalCommand> {
        prop_oneof![
            Just(SignalCommand::Hold),
            (1u32..120).prop_map(SignalCommand::extend),
            (0usize..4).prop_map(|i| SignalCommand::switch(PhaseId::ALL[i])),
        ]
    }

    fn arb_action() -> impl Strategy<Value = ActionName> {
        (any::<bool>(), 0usize..4).prop_map(|(ext, i)| {
            if ext {
                ActionName::Extend(PhaseId::ALL[i])
            } else {
                ActionName::Switch(PhaseId::ALL[i])
            }
        })
    }

    fn arb_constraints() -> impl Strategy<Value = ConstraintSet> {
        (prop::option::of(0usize..4), prop::option::of(0usize..4)).prop_map(|(p, e)| ConstraintSet {
            pedestrian_phase: p.map(|i| PhaseId::ALL[i]),
            emergency_approach: e.map(|i| ApproachId::ALL[i]),
            ..Default::default()
        })
    }

    proptest! {
        #[test]
        fn filter_is_sound_and_idempotent(
            phase in 0usize..4, elapsed in 0u32..80, cand in arb_command(),
            action in prop::option::of(arb_action()), duration in 1u32..120, c in arb_constraints(),
        ) {
            let head = SignalHead::green(PhaseId::ALL[phase], elapsed);
            let r = action.map(|a| rec(a, duration));
            let out = filter(cand, r.as_ref(), &head, &c);
            prop_assert!(allowed_actions(&head, &c).permits(out.final_command), "{:?}", out);
            let again = filter(out.final_command, None, &head, &c);
            prop_assert_eq!(again.disposition, Disposition::CandidatePassthrough);
            prop_assert_eq!(again.final_command, out.final_command);
            let flagged = matches!(out.disposition, Disposition::ClampedRecommendation | Disposition::RejectedToCandidate);
            prop_assert_eq!(!out.violated.is_empty(), flagged);
        }

        #[test]
        fn extension_clamp_arithmetic(elapsed in 10u32..=45, duration in 1u32..=120) {
            let head = SignalHead::green(PhaseId::NsGreen, elapsed);
            let c = ConstraintSet::default();
            let out = filter(SignalCommand::Hold, Some(&rec(ActionName::Extend(PhaseId::NsGreen), duration)), &head, &c);
            let room = 45 - elapsed;
            match out.final_command {
                SignalCommand::Extend { duration: d } => {
                    prop_assert!(d <= room);
                    if duration <= room {
                        prop_assert_eq!(d, duration);
                        prop_assert_eq!(out.disposition, Disposition::AcceptedRecommendation);
                    }
                }
                SignalCommand::Switch { .. } => prop_assert_eq!(room, 0),
                SignalCommand::Hold => prop_assert!(false, "hold after extension recommendation"),
            }
        }
    }
}
