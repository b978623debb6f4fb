//! Short-term state forecasting: a from-scratch LSTM trained on simulator
//! trajectories to predict the next H snapshots from the last K.

mod dataset;
mod lstm;
mod train;
mod weights;

use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, split_indices, windows_from_snapshots, Dataset, Provenance, Sample, Split};
pub use lstm::{Dims, LstmModel};
pub use train::{batch_gradient, mse, train, Adam, EpochLoss, TrainConfig, TrainReport, Tensors};
pub use weights::{load_weights, save_weights, WeightsFile, WeightsMetadata, WEIGHTS_VERSION};

use crate::error::{Error, Result};
use crate::sim::PerApproach;
use crate::state::{ApproachFeatures, NormStats, StateHistory, TrafficState, APPROACH_FEATURES, PHYSICAL_FEATURES, STATE_DIM};

/// Free-flow speed used to clamp speed forecasts.
pub const FREE_FLOW_SPEED: f64 = 13.9;

/// Predicted per-approach features for each of the next H snapshots, in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub steps: Vec<PerApproach<ApproachFeatures>>,
}

impl Forecast {
    /// Decode a flattened `H × 20` vector.
    pub fn from_flat(v: &[f64]) -> Self {
        let steps = v
            .chunks(PHYSICAL_FEATURES)
            .map(|row| PerApproach::from_fn(|a| ApproachFeatures::from_slice(&row[a.index() * APPROACH_FEATURES..])))
            .collect();
        Self { steps }
    }

    /// The current state repeated `horizon` times.
    pub fn persistence(state: &TrafficState, horizon: usize) -> Self {
        Self { steps: vec![state.per_approach; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn last(&self) -> &PerApproach<ApproachFeatures> {
        self.steps.last().expect("forecast has at least one step")
    }

    /// Mean of one feature over the horizon, per approach.
    pub fn mean_over_horizon(&self, f: impl Fn(&ApproachFeatures) -> f64) -> PerApproach<f64> {
        let n = self.steps.len().max(1) as f64;
        PerApproach::from_fn(|a| self.steps.iter().map(|s| f(&s[a])).sum::<f64>() / n)
    }

    fn clamp(&mut self) {
        for step in &mut self.steps {
            for a in crate::sim::ApproachId::ALL {
                let f = &mut step[a];
                f.queue = f.queue.max(0.0);
                f.wait = f.wait.max(0.0);
                f.count = f.count.max(0.0);
                f.occupancy = f.occupancy.max(0.0);
                f.speed = f.speed.clamp(0.0, FREE_FLOW_SPEED);
            }
        }
    }
}

/// A trained model together with the normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub model: LstmModel,
    pub stats: NormStats,
    pub history: usize,
    pub horizon: usize,
}

impl Predictor {
    pub fn new(model: LstmModel, stats: NormStats, history: usize, horizon: usize) -> Result<Self> {
        stats.validate()?;
        let d = model.dims();
        if d.input != STATE_DIM || d.output != horizon * PHYSICAL_FEATURES {
            return Err(Error::Weights(format!(
                "model dims {d:?} incompatible with input {STATE_DIM} and horizon {horizon}"
            )));
        }
        Ok(Self { model, stats, history, horizon })
    }

    /// Normalize a raw `K × 24` window.
    pub fn normalize_window(&self, raw: &[f64]) -> Vec<f64> {
        let mut x = raw.to_vec();
        for row in x.chunks_mut(STATE_DIM) {
            self.stats.normalize_row(row);
        }
        x
    }

    /// The model forecasts the change from the last observed snapshot, scaled per feature.
    /// Anchoring on the current level keeps forecasts sane for queues longer than any seen in training.
    pub fn normalize_target(&self, window: &[f64], raw: &[f64]) -> Vec<f64> {
        let last = last_physical(window);
        raw.iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % PHYSICAL_FEATURES;
                (v - last[j]) / self.stats.std[j]
            })
            .collect()
    }

    /// Forecast from a raw window, de-normalized and clamped.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<Forecast> {
        let out = self.model.forward(&self.normalize_window(raw))?;
        let last = last_physical(raw);
        let phys: Vec<f64> = out
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let j = i % PHYSICAL_FEATURES;
                last[j] + z * self.stats.std[j]
            })
            .collect();
        if phys.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite forecast".into()));
        }
        let mut f = Forecast::from_flat(&phys);
        f.clamp();
        Ok(f)
    }

    /// `Ŷ_{t+1:t+H} = f(X_t)` for a full history window.
    pub fn predict(&self, history: &StateHistory) -> Result<Forecast> {
        if history.len() < self.history {
            return Err(Error::Prediction(format!(
                "history has {} of {} required states",
                history.len(),
                self.history
            )));
        }
        let skip = history.len() - self.history;
        let mut raw = Vec::with_capacity(self.history * STATE_DIM);
        for s in history.iter().skip(skip) {
            raw.extend_from_slice(&s.raw_vector());
        }
        self.predict_raw(&raw)
    }

    pub fn tensors(&self, samples: &[Sample], indices: &[usize]) -> Tensors {
        let mut t = Tensors::new(self.history * STATE_DIM, self.horizon * PHYSICAL_FEATURES);
        for &i in indices {
            let s = &samples[i];
            t.push(&self.normalize_window(&s.x), &self.normalize_target(&s.x, &s.y));
        }
        t
    }
}

/// Queue-length accuracy of a predictor against the persistence forecaster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub queue_rmse: f64,
    pub persistence_queue_rmse: f64,
    /// element-mean squared error in normalized units
    pub mse: f64,
    pub persistence_mse: f64,
}

/// Physical features of the last snapshot in a raw window.
fn last_physical(window: &[f64]) -> &[f64] {
    &window[window.len() - STATE_DIM..][..PHYSICAL_FEATURES]
}

/// Repeat the last observed snapshot over the horizon.
pub fn persistence_forecast(sample: &Sample, horizon: usize) -> Vec<f64> {
    last_physical(&sample.x).iter().copied().cycle().take(horizon * PHYSICAL_FEATURES).collect()
}

pub fn evaluate(predictor: &Predictor, samples: &[Sample], indices: &[usize]) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("evaluation split is empty".into()));
    }
    let (mut q_model, mut q_pers, mut n_q) = (0.0, 0.0, 0usize);
    let (mut m_model, mut m_pers, mut n_m) = (0.0, 0.0, 0usize);
    for &i in indices {
        let s = &samples[i];
        let forecast = predictor.predict_raw(&s.x)?;
        let pred: Vec<f64> = forecast
            .steps
            .iter()
            .flat_map(|step| step.iter().flat_map(|(_, f)| f.to_array()).collect::<Vec<_>>())
            .collect();
        let pers = persistence_forecast(s, predictor.horizon);
        for (j, ((p, b), y)) in pred.iter().zip(&pers).zip(&s.y).enumerate() {
            let feat = j % PHYSICAL_FEATURES;
            if feat.is_multiple_of(APPROACH_FEATURES) {
                q_model += (p - y).powi(2);
                q_pers += (b - y).powi(2);
                n_q += 1;
            }
            let (zp, zb, zy) = (
                predictor.stats.normalize(feat, *p),
                predictor.stats.normalize(feat, *b),
                predictor.stats.normalize(feat, *y),
            );
            m_model += (zp - zy).powi(2);
            m_pers += (zb - zy).powi(2);
            n_m += 1;
        }
    }
    Ok(EvalReport {
        samples: indices.len(),
        queue_rmse: (q_model / n_q as f64).sqrt(),
        persistence_queue_rmse: (q_pers / n_q as f64).sqrt(),
        mse: m_model / n_m as f64,
        persistence_mse: m_pers / n_m as f64,
    })
}

/// Outcome of [`fit`]: the trained predictor and everything needed for the training report.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub predictor: Predictor,
    pub report: TrainReport,
    pub validation: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

/// Fit normalization on the training split, initialize, train, and evaluate.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    if dataset.split.train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let stats = NormStats::fit(
        dataset
            .split
            .train
            .iter()
            .flat_map(|&i| dataset.samples[i].x.chunks(STATE_DIM)),
    )?;
    let dims = Dims {
        input: STATE_DIM,
        hidden: config.hidden,
        layers: 2,
        output: dataset.horizon * PHYSICAL_FEATURES,
    };
    let model = LstmModel::init(dims, config.seed);
    let mut predictor = Predictor::new(model, stats, dataset.history, dataset.horizon)?;
    let train_set = predictor.tensors(&dataset.samples, &dataset.split.train);
    let val_set = predictor.tensors(&dataset.samples, &dataset.split.val);
    let report = train(&mut predictor.model, &train_set, &val_set, config)?;
    let eval_on = |idx: &[usize]| (!idx.is_empty()).then(|| evaluate(&predictor, &dataset.samples, idx)).transpose();
    let validation = eval_on(&dataset.split.val)?;
    let test = eval_on(&dataset.split.test)?;
    Ok(FitOutcome { predictor, report, validation, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{PhaseId, SignalHead};
    use crate::state::aggregate_observation;

    /// An all-zero model forecasts no change: persistence.
    fn identity_like_predictor() -> Predictor {
        let dims = Dims { input: 24, hidden: 20, layers: 2, output: 120 };
        Predictor::new(LstmModel::zeros(dims), NormStats::identity(), 12, 6).unwrap()
    }

    #[test]
    fn head_bias_shifts_last_snapshot() {
        let dims = Dims { input: 24, hidden: 4, layers: 2, output: 120 };
        let mut model = LstmModel::zeros(dims);
        model.head_mut().1.fill(1.5);
        let p = Predictor::new(model, NormStats::identity(), 12, 6).unwrap();
        let mut raw = vec![0.0; 12 * 24];
        raw[11 * 24] = 30.0;
        let f = p.predict_raw(&raw).unwrap();
        assert_eq!(f.steps[0].north.queue, 31.5);
        assert_eq!(f.steps[5].south.queue, 1.5);
    }

    #[test]
    fn zero_model_forecast_is_persistence() {
        let p = identity_like_predictor();
        let mut history = StateHistory::default();
        for k in 0..12 {
            let mut s = aggregate_observation(k * 10, &Default::default(), &SignalHead::new(PhaseId::NsGreen));
            s.per_approach = PerApproach::from_fn(|_| ApproachFeatures { queue: 2.0, wait: 2.0, count: 2.0, speed: 2.0, occupancy: 2.0 });
            history.push(s).unwrap();
        }
        let f = p.predict(&history).unwrap();
        assert_eq!(f.horizon(), 6);
        for step in &f.steps {
            for (_, a) in step.iter() {
                assert_eq!(a.to_array(), [2.0; 5]);
            }
        }
    }

    #[test]
    fn forecasts_are_clamped() {
        let dims = Dims { input: 24, hidden: 4, layers: 2, output: 120 };
        let mut model = LstmModel::zeros(dims);
        let (_, b) = model.head_mut();
        b.fill(-5.0);
        let p = Predictor::new(model, NormStats::identity(), 12, 6).unwrap();
        let f = p.predict_raw(&vec![0.0; 12 * 24]).unwrap();
        assert!(f.steps.iter().all(|s| s.iter().all(|(_, a)| a.to_array().iter().all(|&v| v >= 0.0))));
        let mut model = LstmModel::zeros(dims);
        model.head_mut().1.fill(50.0);
        let p = Predictor::new(model, NormStats::identity(), 12, 6).unwrap();
        let f = p.predict_raw(&vec![0.0; 12 * 24]).unwrap();
        assert_eq!(f.last().north.speed, FREE_FLOW_SPEED);
    }

    #[test]
    fn short_history_is_prediction_error() {
        let p = identity_like_predictor();
        let mut history = StateHistory::default();
        history
            .push(aggregate_observation(0, &Default::default(), &SignalHead::new(PhaseId::NsGreen)))
            .unwrap();
        assert_eq!(p.predict(&history).unwrap_err().class(), "prediction");
    }

    #[test]
    fn forecast_exposes_queue_and_wait_per_approach() {
        let mut flat = vec![0.0; 120];
        // last step, south queue / wait
        flat[5 * 20 + 5] = 27.0;
        flat[5 * 20 + 6] = 110.0;
        let f = Forecast::from_flat(&flat);
        assert_eq!(f.last().south.queue, 27.0);
        assert_eq!(f.last().south.wait, 110.0);
    }

    #[test]
    fn persistence_repeats_last_row() {
        let mut x = vec![0.0; 12 * 24];
        x[11 * 24] = 9.0;
        x[11 * 24 + 19] = 4.0;
        let s = Sample { x, y: vec![0.0; 120] };
        let p = persistence_forecast(&s, 6);
        assert_eq!(p.len(), 120);
        for k in 0..6 {
            assert_eq!(p[k * 20], 9.0);
            assert_eq!(p[k * 20 + 19], 4.0);
        }
    }
}
