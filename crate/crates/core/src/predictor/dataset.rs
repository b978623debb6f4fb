//! Sliding-window datasets built from simulated trajectories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControllerKind;
use crate::episode::{run_episode, EpisodeOptions};
use crate::error::{Error, Result};
use crate::sim::ScenarioConfig;
use crate::state::{TrafficState, PHYSICAL_FEATURES, SAMPLE_INTERVAL, STATE_DIM};

/// One `(X, Y)` pair in physical units: `X` is `K × 24`, `Y` is `H × 20`, both row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    pub seed: u64,
    pub controller: ControllerKind,
    pub snapshots: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub history: usize,
    pub horizon: usize,
    pub samples: Vec<Sample>,
    pub provenance: Vec<Provenance>,
    pub split: Split,
}

/// Every window of `history` consecutive snapshots followed by `horizon` targets.
pub fn windows_from_snapshots(snapshots: &[TrafficState], history: usize, horizon: usize) -> Vec<Sample> {
    if snapshots.len() < history + horizon {
        return Vec::new();
    }
    (0..=snapshots.len() - history - horizon)
        .map(|start| {
            let mut x = Vec::with_capacity(history * STATE_DIM);
            for s in &snapshots[start..start + history] {
                x.extend_from_slice(&s.raw_vector());
            }
            let mut y = Vec::with_capacity(horizon * PHYSICAL_FEATURES);
            for s in &snapshots[start + history..start + history + horizon] {
                y.extend_from_slice(&s.physical());
            }
            Sample { x, y }
        })
        .collect()
}

/// Shuffle `0..n` and cut it into floor(train·n), floor(val·n), remainder.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions[0] * n as f64).floor() as usize;
    let n_val = (fractions[1] * n as f64).floor() as usize;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Split { train: idx, val, test }
}

/// Simulate each `(scenario, seed)` under a baseline controller, sample every
/// 10 s, window, shuffle and split.
pub fn generate_dataset(
    scenarios: &[ScenarioConfig],
    driver: ControllerKind,
    seeds: &[u64],
    history: usize,
    horizon: usize,
    split: [f64; 3],
    shuffle_seed: u64,
) -> Result<Dataset> {
    if scenarios.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyDataset("no scenarios or seeds given".into()));
    }
    if driver.needs_predictor() {
        return Err(Error::Config(format!("dataset driver must be a baseline controller, got {driver:?}")));
    }
    let needed = (history + horizon) as u32 * SAMPLE_INTERVAL;
    if let Some(short) = scenarios.iter().find(|s| s.duration == 0) {
        return Err(Error::EmptyDataset(format!(
            "scenario {:?} has zero duration; one window needs {needed} s",
            short.name
        )));
    }
    let mut samples = Vec::new();
    let mut provenance = Vec::new();
    for scenario in scenarios {
        for &seed in seeds {
            let cfg = scenario.clone().with_seed(seed);
            let log = run_episode(&cfg, driver, &EpisodeOptions::default(), None)?;
            let windows = windows_from_snapshots(&log.snapshots, history, horizon);
            provenance.push(Provenance {
                scenario: cfg.name.clone(),
                seed,
                controller: driver,
                snapshots: log.snapshots.len(),
                samples: windows.len(),
            });
            samples.extend(windows);
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "runs are shorter than the {needed} s needed for one window"
        )));
    }
    let split = split_indices(samples.len(), split, shuffle_seed);
    Ok(Dataset { history, horizon, samples, provenance, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_scenario, PhaseId, SignalHead};
    use crate::state::aggregate_observation;

    fn snapshots(n: u32) -> Vec<TrafficState> {
        (0..n)
            .map(|k| {
                let mut s = aggregate_observation(k * 10, &Default::default(), &SignalHead::new(PhaseId::NsGreen));
                s.per_approach.north.queue = f64::from(k);
                s
            })
            .collect()
    }

    #[test]
    fn window_count_matches_formula() {
        let w = windows_from_snapshots(&snapshots(360), 12, 6);
        assert_eq!(w.len(), 360 - 12 - 6 + 1);
        assert_eq!(w[0].x.len(), 12 * 24);
        assert_eq!(w[0].y.len(), 6 * 20);
        // first target row is snapshot 12
        assert_eq!(w[0].y[0], 12.0);
        assert_eq!(w[5].x[0], 5.0);
        assert!(windows_from_snapshots(&snapshots(17), 12, 6).is_empty());
        assert_eq!(windows_from_snapshots(&snapshots(18), 12, 6).len(), 1);
    }

    #[test]
    fn split_sizes() {
        let s = split_indices(343, [0.7, 0.15, 0.15], 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (240, 51, 52));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..343).collect::<Vec<_>>());
    }

    #[test]
    fn hour_run_yields_343_samples_deterministically() {
        let sc = build_scenario("balanced").unwrap();
        let a = generate_dataset(std::slice::from_ref(&sc), ControllerKind::RuleBased, &[7], 12, 6, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!(a.samples.len(), 343);
        assert_eq!(a.provenance[0].snapshots, 360);
        let b = generate_dataset(&[sc], ControllerKind::RuleBased, &[7], 12, 6, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_run_is_empty_dataset_error() {
        let sc = build_scenario("balanced").unwrap().with_duration(170);
        let err = generate_dataset(&[sc], ControllerKind::RuleBased, &[1], 12, 6, [0.7, 0.15, 0.15], 1).unwrap_err();
        assert_eq!(err.class(), "empty-dataset");
        let zero = build_scenario("balanced").unwrap().with_duration(0);
        let err = generate_dataset(&[zero], ControllerKind::RuleBased, &[1], 12, 6, [0.7, 0.15, 0.15], 1).unwrap_err();
        assert_eq!(err.class(), "empty-dataset");
    }
}
