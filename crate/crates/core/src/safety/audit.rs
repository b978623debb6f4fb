//! Re-derives green and yellow intervals from the per-second signal timeline and
//! attributes every timing violation to the decision responsible for it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Interval, PhaseId, SignalTiming};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MaxGreen,
    MinGreen,
    Yellow,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// First second of the offending interval (max-green: the first second past the limit).
    pub time: u32,
    pub decision_time: Option<u32>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub decisions: usize,
    pub violating_decisions: usize,
    pub violations: Vec<Violation>,
    /// Percentage of decisions with at least one attributed violation; `None` without decisions.
    pub rate: Option<f64>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct Run {
    interval: Interval,
    phase: PhaseId,
    start: u32,
    len: u32,
}

fn runs(timeline: &[(Interval, PhaseId)]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (t, &(interval, phase)) in timeline.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.interval == interval && r.phase == phase => r.len += 1,
            _ => out.push(Run { interval, phase, start: t as u32, len: 1 }),
        }
    }
    out
}

/// `timeline[t]` is the display during second `t`; during yellow, `phase` is the outgoing phase.
pub fn audit(timeline: &[(Interval, PhaseId)], decision_times: &[u32], timing: &SignalTiming) -> Result<AuditReport> {
    if decision_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Log("decision times are not strictly increasing".into()));
    }
    if let Some(&last) = decision_times.last() {
        if last as usize >= timeline.len() {
            return Err(Error::Log(format!("decision at {last} s lies beyond the {} s timeline", timeline.len())));
        }
    }
    let responsible = |t: u32| -> Option<u32> {
        let i = decision_times.partition_point(|&d| d <= t);
        (i > 0).then(|| decision_times[i - 1])
    };
    let end = timeline.len() as u32;
    let all = runs(timeline);
    let mut violations = Vec::new();

    for (i, run) in all.iter().enumerate() {
        let next = all.get(i + 1);
        match run.interval {
            Interval::Green => {
                // Every second shown after `max_green` seconds of green is over the limit.
                if run.len > timing.max_green {
                    let mut seen = BTreeSet::new();
                    for t in run.start + timing.max_green..run.start + run.len {
                        let d = responsible(t);
                        if seen.insert(d) {
                            violations.push(Violation {
                                kind: ViolationKind::MaxGreen,
                                time: t,
                                decision_time: d,
                                detail: format!("{} green for {} s", run.phase, run.len),
                            });
                        }
                    }
                }
                if let Some(next) = next {
                    if next.interval == Interval::Green {
                        violations.push(Violation {
                            kind: ViolationKind::Yellow,
                            time: next.start,
                            decision_time: responsible(next.start),
                            detail: format!("{} to {} without yellow", run.phase, next.phase),
                        });
                    } else if run.len < timing.min_green {
                        violations.push(Violation {
                            kind: ViolationKind::MinGreen,
                            time: run.start,
                            decision_time: responsible(next.start),
                            detail: format!("{} ended after {} s", run.phase, run.len),
                        });
                    }
                }
            }
            Interval::Yellow => {
                let truncated = run.start + run.len == end;
                let bad_length = if truncated { run.len > timing.yellow } else { run.len != timing.yellow };
                let prev_phase = i.checked_sub(1).map(|k| all[k].phase);
                let bad_next = next.is_some_and(|n| n.interval != Interval::Green || Some(n.phase) == prev_phase);
                if bad_length || bad_next {
                    violations.push(Violation {
                        kind: ViolationKind::Yellow,
                        time: run.start,
                        decision_time: responsible(run.start),
                        detail: format!("yellow of {} s after {}", run.len, run.phase),
                    });
                }
            }
        }
    }

    let violating: BTreeSet<u32> = violations.iter().filter_map(|v| v.decision_time).collect();
    let decisions = decision_times.len();
    let rate = (decisions > 0).then(|| 100.0 * violating.len() as f64 / decisions as f64);
    Ok(AuditReport { decisions, violating_decisions: violating.len(), violations, rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Interval::*;
    use PhaseId::*;

    fn timeline(segments: &[(Interval, PhaseId, u32)]) -> Vec<(Interval, PhaseId)> {
        segments.iter().flat_map(|&(i, p, n)| std::iter::repeat_n((i, p), n as usize)).collect()
    }

    #[test]
    fn clean_timeline() {
        let tl = timeline(&[(Green, NsGreen, 30), (Yellow, NsGreen, 3), (Green, EwGreen, 45), (Yellow, EwGreen, 3), (Green, NsLeft, 5)]);
        let r = audit(&tl, &[10, 20, 30, 43, 53, 63, 73, 78], &SignalTiming::default()).unwrap();
        assert!(r.is_clean(), "{:?}", r.violations);
        assert_eq!(r.rate, Some(0.0));
    }

    #[test]
    fn over_max_green_attributed_per_decision() {
        let tl = timeline(&[(Green, NsGreen, 70), (Yellow, NsGreen, 3), (Green, EwGreen, 10)]);
        let r = audit(&tl, &[10, 40, 60, 70], &SignalTiming::default()).unwrap();
        // seconds 45..70 are over; decisions at 40 and 60 own them
        assert_eq!(r.violating_decisions, 2);
        assert_eq!(r.rate, Some(50.0));
        assert!(r.violations.iter().all(|v| v.kind == ViolationKind::MaxGreen));
    }

    #[test]
    fn short_green_and_bad_yellow() {
        let tl = timeline(&[(Green, NsGreen, 5), (Yellow, NsGreen, 2), (Green, EwGreen, 20)]);
        let r = audit(&tl, &[5, 20], &SignalTiming::default()).unwrap();
        let kinds: Vec<_> = r.violations.iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::MinGreen, ViolationKind::Yellow]);
        assert_eq!(r.violating_decisions, 1);
    }

    #[test]
    fn phase_change_without_yellow() {
        let tl = timeline(&[(Green, NsGreen, 20), (Green, EwGreen, 20)]);
        let r = audit(&tl, &[20], &SignalTiming::default()).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::Yellow);
    }

    #[test]
    fn yellow_cut_by_end_of_run_is_fine() {
        let tl = timeline(&[(Green, NsGreen, 20), (Yellow, NsGreen, 2)]);
        assert!(audit(&tl, &[20], &SignalTiming::default()).unwrap().is_clean());
    }

    #[test]
    fn empty_log_rate_is_undefined() {
        let r = audit(&[], &[], &SignalTiming::default()).unwrap();
        assert_eq!(r.decisions, 0);
        assert_eq!(r.rate, None);
    }

    #[test]
    fn malformed_decisions_rejected() {
        let tl = timeline(&[(Green, NsGreen, 20)]);
        assert_eq!(audit(&tl, &[10, 5], &SignalTiming::default()).unwrap_err().class(), "log");
        assert_eq!(audit(&tl, &[25], &SignalTiming::default()).unwrap_err().class(), "log");
    }
}
