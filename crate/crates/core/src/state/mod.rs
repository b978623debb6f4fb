//! Intersection-level state vectors, the K-step history window, and feature normalization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ApproachId, Interval, LaneFeatures, LaneId, PerApproach, PhaseId, SignalHead};

/// Features per approach: queue, wait, count, speed, occupancy.
pub const APPROACH_FEATURES: usize = 5;
/// 4 approaches × 5 features.
pub const PHYSICAL_FEATURES: usize = 20;
/// Physical features plus the 4-entry phase one-hot.
pub const STATE_DIM: usize = 24;
/// History length (12 × 10 s = 120 s).
pub const HISTORY_LEN: usize = 12;
/// Seconds between snapshots.
pub const SAMPLE_INTERVAL: u32 = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproachFeatures {
    pub queue: f64,
    pub wait: f64,
    pub count: f64,
    pub speed: f64,
    pub occupancy: f64,
}

impl ApproachFeatures {
    pub fn to_array(self) -> [f64; APPROACH_FEATURES] {
        [self.queue, self.wait, self.count, self.speed, self.occupancy]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            queue: v[0],
            wait: v[1],
            count: v[2],
            speed: v[3],
            occupancy: v[4],
        }
    }
}

/// One snapshot `s_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    pub time: u32,
    pub per_approach: PerApproach<ApproachFeatures>,
    /// Encodes the displayed phase; during yellow, the outgoing one.
    pub phase_onehot: [f64; 4],
    pub yellow: bool,
}

impl TrafficState {
    pub fn phase(&self) -> PhaseId {
        let idx = self
            .phase_onehot
            .iter()
            .position(|&x| x == 1.0)
            .unwrap_or(0);
        PhaseId::ALL[idx]
    }

    /// The 20 physical features, approach-major.
    pub fn physical(&self) -> [f64; PHYSICAL_FEATURES] {
        let mut out = [0.0; PHYSICAL_FEATURES];
        for (a, f) in self.per_approach.iter() {
            out[a.index() * APPROACH_FEATURES..][..APPROACH_FEATURES].copy_from_slice(&f.to_array());
        }
        out
    }

    /// Unnormalized 24-vector: physical features then one-hot.
    pub fn raw_vector(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out[..PHYSICAL_FEATURES].copy_from_slice(&self.physical());
        out[PHYSICAL_FEATURES..].copy_from_slice(&self.phase_onehot);
        out
    }

    pub fn total_queue(&self) -> f64 {
        self.per_approach.iter().map(|(_, f)| f.queue).sum()
    }
}

/// Collapse the eight lane observations into approach-level features.
///
/// Queue, wait and count are summed over an approach's two lanes; speed and
/// occupancy are count-weighted means (plain means when the approach is empty).
pub fn aggregate(time: u32, lanes: &[(LaneId, LaneFeatures)], signal: &SignalHead) -> Result<TrafficState> {
    let mut per_lane: [Option<LaneFeatures>; 8] = [None; 8];
    for &(lane, f) in lanes {
        per_lane[lane.index()] = Some(f);
    }
    if let Some(missing) = LaneId::ALL.iter().find(|l| per_lane[l.index()].is_none()) {
        return Err(Error::Representation(format!("missing lane {missing}")));
    }
    let per_approach = PerApproach::from_fn(|a: ApproachId| {
        let fs: Vec<LaneFeatures> = LaneId::ALL
            .iter()
            .filter(|l| l.approach == a)
            .map(|l| per_lane[l.index()].expect("checked above"))
            .collect();
        let count: f64 = fs.iter().map(|f| f.count).sum();
        let mean = |g: fn(&LaneFeatures) -> f64| {
            if count > 0.0 {
                fs.iter().map(|f| f.count * g(f)).sum::<f64>() / count
            } else {
                fs.iter().map(g).sum::<f64>() / fs.len() as f64
            }
        };
        ApproachFeatures {
            queue: fs.iter().map(|f| f.queue).sum(),
            wait: fs.iter().map(|f| f.wait).sum(),
            count,
            speed: mean(|f| f.speed),
            occupancy: mean(|f| f.occupancy),
        }
    });
    Ok(TrafficState {
        time,
        per_approach,
        phase_onehot: signal.current_phase.one_hot(),
        yellow: signal.interval == Interval::Yellow,
    })
}

/// Convenience for a simulator observation in [`LaneId::ALL`] order.
pub fn aggregate_observation(time: u32, lanes: &[LaneFeatures; 8], signal: &SignalHead) -> TrafficState {
    let pairs: Vec<(LaneId, LaneFeatures)> = LaneId::ALL.iter().copied().zip(lanes.iter().copied()).collect();
    aggregate(time, &pairs, signal).expect("all eight lanes present")
}

/// Sliding window `X_t` of the last K snapshots, spaced exactly `sample_interval` apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateHistory {
    window: VecDeque<TrafficState>,
    capacity: usize,
    sample_interval: u32,
}

impl Default for StateHistory {
    fn default() -> Self {
        Self::new(HISTORY_LEN, SAMPLE_INTERVAL)
    }
}

impl StateHistory {
    pub fn new(capacity: usize, sample_interval: u32) -> Self {
        Self {
            window: VecDeque::with_capacity(capacity + 1),
            capacity,
            sample_interval,
        }
    }

    pub fn push(&mut self, s: TrafficState) -> Result<()> {
        if let Some(last) = self.window.back() {
            if s.time != last.time + self.sample_interval {
                return Err(Error::Representation(format!(
                    "history spacing: state at t={} follows t={}, expected t={}",
                    s.time,
                    last.time,
                    last.time + self.sample_interval
                )));
            }
        }
        self.window.push_back(s);
        if self.window.len() > self.capacity {
            self.window.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.window.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn latest(&self) -> Option<&TrafficState> {
        self.window.back()
    }

    /// The entry before the latest.
    pub fn previous(&self) -> Option<&TrafficState> {
        self.window.len().checked_sub(2).map(|i| &self.window[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrafficState> {
        self.window.iter()
    }
}

/// Per-feature z-score statistics over the 20 physical features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; PHYSICAL_FEATURES],
            std: vec![1.0; PHYSICAL_FEATURES],
        }
    }

    /// Fit on rows whose first 20 entries are physical features.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; PHYSICAL_FEATURES];
        let mut sumsq = [0.0; PHYSICAL_FEATURES];
        for row in rows {
            for j in 0..PHYSICAL_FEATURES {
                sum[j] += row[j];
                sumsq[j] += row[j] * row[j];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset("cannot fit normalization on zero rows".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = (0..PHYSICAL_FEATURES)
            .map(|j| (sumsq[j] / nf - mean[j] * mean[j]).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != PHYSICAL_FEATURES || self.std.len() != PHYSICAL_FEATURES {
            return Err(Error::Weights(format!(
                "normalization stats must have {PHYSICAL_FEATURES} entries, got {}/{}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s >= STD_FLOOR)) {
            return Err(Error::Weights("normalization std below floor".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, j: usize, x: f64) -> f64 {
        (x - self.mean[j]) / self.std[j]
    }

    pub fn denormalize(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }

    /// Normalize a raw 24-vector in place (one-hot tail untouched).
    pub fn normalize_row(&self, row: &mut [f64]) {
        for (j, x) in row.iter_mut().take(PHYSICAL_FEATURES).enumerate() {
            *x = self.normalize(j, *x);
        }
    }
}

/// 4 approaches × 5 z-scored features followed by the raw one-hot phase.
pub fn to_feature_vector(s: &TrafficState, stats: &NormStats) -> [f64; STATE_DIM] {
    let mut v = s.raw_vector();
    stats.normalize_row(&mut v);
    v
}

/// Inverse of [`to_feature_vector`].
pub fn from_feature_vector(time: u32, v: &[f64; STATE_DIM], stats: &NormStats) -> TrafficState {
    let per_approach = PerApproach::from_fn(|a| {
        let base = a.index() * APPROACH_FEATURES;
        let raw: Vec<f64> = (0..APPROACH_FEATURES)
            .map(|k| stats.denormalize(base + k, v[base + k]))
            .collect();
        ApproachFeatures::from_slice(&raw)
    });
    let mut phase_onehot = [0.0; 4];
    phase_onehot.copy_from_slice(&v[PHYSICAL_FEATURES..]);
    TrafficState {
        time,
        per_approach,
        phase_onehot,
        yellow: false,
    }
}
