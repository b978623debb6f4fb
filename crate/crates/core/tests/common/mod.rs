#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use siglab_core::predictor::{batch_gradient, mse, Dims, LstmModel, Tensors};
use siglab_core::safety::Disposition;
use siglab_core::RunLog;

pub fn tiny_set(dims: Dims, steps: usize, n: usize) -> Tensors {
    let mut t = Tensors::new(steps * dims.input, dims.output);
    for s in 0..n {
        let x: Vec<f64> = (0..steps * dims.input).map(|i| ((i + 7 * s) as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..dims.output).map(|i| ((i + 3 * s) as f64 * 0.91).cos() * 0.5).collect();
        t.push(&x, &y);
    }
    t
}

/// Worst relative error between analytic gradients and central differences with step `h`.
pub fn worst_gradient_error(model: &LstmModel, data: &Tensors, h: f64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, grad) = batch_gradient(model, data, &idx).unwrap();
    let mut worst = 0.0f64;
    for (p, &g) in grad.iter().enumerate() {
        let mut plus = model.clone();
        plus.params_mut()[p] += h;
        let mut minus = model.clone();
        minus.params_mut()[p] -= h;
        let numeric = (mse(&plus, data).unwrap() - mse(&minus, data).unwrap()) / (2.0 * h);
        let scale = g.abs().max(numeric.abs());
        // both effectively zero: compare absolutely
        let err = if scale < 1e-7 { (g - numeric).abs() * 1e3 } else { (g - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Textbook cell, written against per-gate slices rather than the packed loop.
pub fn naive_forward(model: &LstmModel, x: &[f64]) -> Vec<f64> {
    let d = model.dims();
    let hd = d.hidden;
    let steps = x.len() / d.input;
    let mut seq: Vec<Vec<f64>> = (0..steps).map(|t| x[t * d.input..(t + 1) * d.input].to_vec()).collect();
    for l in 0..d.layers {
        let (w, b) = model.layer(l);
        let inp = seq[0].len();
        let cols = inp + hd;
        let row = |gate: usize, j: usize, xt: &[f64], hp: &[f64]| -> f64 {
            let r = gate * hd + j;
            let wr = &w[r * cols..(r + 1) * cols];
            let mut s = b[r];
            for k in 0..inp {
                s += wr[k] * xt[k];
            }
            for k in 0..hd {
                s += wr[inp + k] * hp[k];
            }
            s
        };
        let mut hp = vec![0.0; hd];
        let mut cp = vec![0.0; hd];
        let mut out = Vec::with_capacity(steps);
        for xt in &seq {
            let mut hn = vec![0.0; hd];
            let mut cn = vec![0.0; hd];
            for j in 0..hd {
                let i = sig(row(0, j, xt, &hp));
                let f = sig(row(1, j, xt, &hp));
                let g = row(2, j, xt, &hp).tanh();
                let o = sig(row(3, j, xt, &hp));
                cn[j] = f * cp[j] + i * g;
                hn[j] = o * cn[j].tanh();
            }
            hp = hn;
            cp = cn;
            out.push(hp.clone());
        }
        seq = out;
    }
    let last = seq.last().unwrap();
    let (wo, bo) = model.head();
    (0..d.output)
        .map(|r| bo[r] + (0..hd).map(|k| wo[r * hd + k] * last[k]).sum::<f64>())
        .collect()
}


#[derive(Default)]
pub struct Oracle {
    pub arrived: u64,
    pub exited: u64,
    pub wait: u64,
    pub travel: u64,
    pub stops: u64,
    pub idle_all: u64,
    pub moving_all: u64,
    pub stops_all: u64,
}

/// Second pass: sweep the clock, keep explicit present and halted sets, and
/// charge each vehicle one second for every step it ends in either set.
pub fn oracle(log: &RunLog) -> Oracle {
    let mut present: HashSet<u64> = HashSet::new();
    let mut halted: HashSet<u64> = HashSet::new();
    let mut entered: HashMap<u64, u32> = HashMap::new();
    let mut halted_secs: HashMap<u64, u64> = HashMap::new();
    let mut present_secs: HashMap<u64, u64> = HashMap::new();
    let mut stop_count: HashMap<u64, u64> = HashMap::new();
    let mut exits: Vec<(u64, u32)> = Vec::new();
    for step in &log.steps {
        let new: HashSet<u64> = step.arrivals.iter().map(|a| a.id).collect();
        for id in &new {
            present.insert(*id);
            entered.insert(*id, step.t);
        }
        for id in step.halted.iter().filter(|id| new.contains(id)) {
            halted.insert(*id);
            *stop_count.entry(*id).or_default() += 1;
        }
        for id in step.released.iter().chain(&step.departures) {
            halted.remove(id);
        }
        for id in &step.departures {
            present.remove(id);
            exits.push((*id, step.t));
        }
        for id in step.halted.iter().filter(|id| !new.contains(id)) {
            halted.insert(*id);
            *stop_count.entry(*id).or_default() += 1;
        }
        for id in &present {
            *present_secs.entry(*id).or_default() += 1;
        }
        for id in &halted {
            *halted_secs.entry(*id).or_default() += 1;
        }
    }
    let mut o = Oracle { arrived: entered.len() as u64, ..Default::default() };
    for (id, t) in &exits {
        o.exited += 1;
        o.wait += halted_secs.get(id).copied().unwrap_or(0);
        o.travel += u64::from(t - entered[id]);
        o.stops += stop_count.get(id).copied().unwrap_or(0);
    }
    for id in entered.keys() {
        let idle = halted_secs.get(id).copied().unwrap_or(0);
        o.idle_all += idle;
        o.moving_all += present_secs.get(id).copied().unwrap_or(0).saturating_sub(idle);
        o.stops_all += stop_count.get(id).copied().unwrap_or(0);
    }
    o
}

#[derive(Debug, Default, PartialEq)]
pub struct Counts {
    pub decisions: usize,
    pub violating: usize,
    pub triggered: usize,
    pub accepted: usize,
    pub adjusted: usize,
    pub valid: usize,
    pub fallbacks: usize,
}

pub fn count_decisions(log: &RunLog) -> Counts {
    let mut c = Counts::default();
    for d in &log.decisions {
        c.decisions += 1;
        c.violating += usize::from(d.audited_violation);
        c.fallbacks += usize::from(d.fallback.is_some());
        if d.trigger.is_none() {
            continue;
        }
        c.triggered += 1;
        if let Some(rec) = &d.recommendation {
            c.accepted += usize::from(rec.accept_candidate_action);
            let overridden = match d.disposition {
                Some(Disposition::ClampedRecommendation) | Some(Disposition::RejectedToCandidate) => true,
                _ => d.final_command != d.candidate,
            };
            c.adjusted += usize::from(overridden);
        }
        c.valid += usize::from(d.explanation_valid == Some(true));
    }
    c
}

