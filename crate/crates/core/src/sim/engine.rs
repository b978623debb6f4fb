//! Point-queue simulator at 1 s resolution.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::geometry::{ApproachId, LaneId, LaneKind, PhaseId};
use super::scenario::ScenarioConfig;
use super::signal::{Interval, SignalCommand, SignalHead, SignalTiming};
use crate::error::{Error, Result};

/// Physical constants of the point-queue link model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// metres
    pub link_length: f64,
    /// m/s
    pub free_flow_speed: f64,
    /// vehicles per lane
    pub lane_capacity: usize,
    /// seconds between discharges from one lane
    pub saturation_headway: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            link_length: 150.0,
            free_flow_speed: 13.9,
            lane_capacity: 20,
            saturation_headway: 2,
        }
    }
}

impl SimParams {
    /// Seconds to cover the link at free flow (rounded up).
    pub fn travel_time(&self) -> u32 {
        (self.link_length / self.free_flow_speed).ceil() as u32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub lane: LaneId,
    pub entry_time: u32,
    pub exit_time: Option<u32>,
    pub stop_count: u32,
    pub halted: bool,
    pub halted_since: Option<u32>,
    /// Time at which the vehicle reaches the stop line.
    pub stop_line_time: u32,
    /// Total seconds spent halted.
    pub waited: u32,
}

impl Vehicle {
    fn halt(&mut self, t: u32) {
        self.halted = true;
        self.halted_since = Some(t);
        self.stop_count += 1;
    }

    fn release(&mut self) {
        self.halted = false;
        self.halted_since = None;
    }
}

/// Vehicles on one lane's link (FIFO) plus the spill-back buffer upstream of it.
#[derive(Clone, Debug)]
pub struct LaneQueue {
    pub lane: LaneId,
    pub vehicles: VecDeque<Vehicle>,
    pub upstream: VecDeque<Vehicle>,
    pub capacity: usize,
    last_discharge: Option<u32>,
}

impl LaneQueue {
    fn new(lane: LaneId, capacity: usize) -> Self {
        Self {
            lane,
            vehicles: VecDeque::with_capacity(capacity),
            upstream: VecDeque::new(),
            capacity,
            last_discharge: None,
        }
    }

    pub fn len(&self) -> usize {
        self.vehicles.len() + self.upstream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().chain(self.upstream.iter())
    }
}

/// Raw per-lane observation `[q, w, n, v, o]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneFeatures {
    /// halted vehicles, including the upstream buffer
    pub queue: f64,
    /// accumulated waiting seconds of the halted vehicles
    pub wait: f64,
    /// vehicles on the link
    pub count: f64,
    /// m/s
    pub speed: f64,
    /// count / capacity
    pub occupancy: f64,
}

impl LaneFeatures {
    pub fn to_array(self) -> [f64; 5] {
        [self.queue, self.wait, self.count, self.speed, self.occupancy]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: u64,
    pub lane: LaneId,
}

/// Signal display during one second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSample {
    pub phase: PhaseId,
    pub interval: Interval,
    pub elapsed_green: u32,
}

/// One line of the JSON-lines event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    pub command: SignalCommand,
    pub signal: SignalSample,
    pub arrivals: Vec<Arrival>,
    pub departures: Vec<u64>,
    /// moving → halted transitions (one stop each)
    pub halted: Vec<u64>,
    /// halted → moving transitions other than departure
    pub released: Vec<u64>,
}

pub struct Simulator {
    config: ScenarioConfig,
    params: SimParams,
    timing: SignalTiming,
    rng: ChaCha8Rng,
    t: u32,
    lanes: [LaneQueue; 8],
    signal: SignalHead,
    next_id: u64,
    entered: u64,
    exited: Vec<Vehicle>,
}

impl Simulator {
    pub fn new(config: ScenarioConfig, params: SimParams, timing: SignalTiming) -> Result<Self> {
        config.validate()?;
        if params.lane_capacity == 0 || params.saturation_headway == 0 || params.free_flow_speed <= 0.0 {
            return Err(Error::Config(format!("invalid simulator parameters {params:?}")));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            params,
            timing,
            rng,
            t: 0,
            lanes: LaneId::ALL.map(|l| LaneQueue::new(l, params.lane_capacity)),
            signal: SignalHead::new(PhaseId::NsGreen),
            next_id: 0,
            entered: 0,
            exited: Vec::new(),
        })
    }

    pub fn with_defaults(config: ScenarioConfig) -> Result<Self> {
        Self::new(config, SimParams::default(), SignalTiming::default())
    }

    pub fn time(&self) -> u32 {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.config.duration
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn timing(&self) -> &SignalTiming {
        &self.timing
    }

    pub fn signal(&self) -> &SignalHead {
        &self.signal
    }

    pub fn lane(&self, lane: LaneId) -> &LaneQueue {
        &self.lanes[lane.index()]
    }

    pub fn vehicles_entered(&self) -> u64 {
        self.entered
    }

    pub fn vehicles_exited(&self) -> u64 {
        self.exited.len() as u64
    }

    pub fn vehicles_present(&self) -> u64 {
        self.lanes.iter().map(|l| l.len() as u64).sum()
    }

    pub fn exited_vehicles(&self) -> &[Vehicle] {
        &self.exited
    }

    pub fn present_vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flat_map(|l| l.all())
    }

    /// Place a vehicle directly on a lane link, reaching the stop line at `stop_line_time`.
    /// Not recorded as an arrival in the event log.
    pub fn spawn_vehicle(&mut self, lane: LaneId, stop_line_time: u32) -> u64 {
        let id = self.fresh_id();
        let v = Vehicle {
            id,
            lane,
            entry_time: self.t,
            exit_time: None,
            stop_count: 0,
            halted: false,
            halted_since: None,
            stop_line_time,
            waited: 0,
        };
        self.entered += 1;
        let t = self.t;
        let q = &mut self.lanes[lane.index()];
        if q.vehicles.len() < q.capacity && q.upstream.is_empty() {
            q.vehicles.push_back(v);
        } else {
            let mut v = v;
            v.halt(t);
            q.upstream.push_back(v);
        }
        id
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Advance one second under `command`.
    pub fn step(&mut self, command: SignalCommand) -> Result<StepRecord> {
        let t = self.t;
        if self.is_finished() {
            return Err(Error::Constraint {
                time: t,
                message: format!("simulation already ended at {}", self.config.duration),
            });
        }
        self.apply(command)?;

        let signal = SignalSample {
            phase: self.signal.current_phase,
            interval: self.signal.interval,
            elapsed_green: self.signal.elapsed_green,
        };
        let mut record = StepRecord {
            t,
            command,
            signal,
            arrivals: Vec::new(),
            departures: Vec::new(),
            halted: Vec::new(),
            released: Vec::new(),
        };

        self.arrive(t, &mut record);
        self.discharge(t, &mut record);
        self.update_halts(t, &mut record);
        self.signal.tick(self.timing.yellow);
        self.t += 1;
        Ok(record)
    }

    fn apply(&mut self, command: SignalCommand) -> Result<()> {
        let SignalCommand::Switch { target } = command else {
            return Ok(());
        };
        let reject = |message: String| Err(Error::Constraint { time: self.t, message });
        if !self.signal.is_green() {
            return reject(format!("switch to {target} requested during yellow"));
        }
        if target == self.signal.current_phase {
            return reject(format!("switch target {target} is already green"));
        }
        if self.signal.elapsed_green < self.timing.min_green {
            return reject(format!(
                "switch after {} s of green, minimum is {} s",
                self.signal.elapsed_green, self.timing.min_green
            ));
        }
        self.signal.begin_yellow(target);
        Ok(())
    }

    fn arrive(&mut self, t: u32, record: &mut StepRecord) {
        let travel = self.params.travel_time();
        for approach in ApproachId::ALL {
            let rate = self.config.rate_at(approach, t) / 3600.0;
            if rate <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate)
                .expect("positive finite rate")
                .sample(&mut self.rng) as u64;
            for _ in 0..count {
                let kind = if self.rng.random::<f64>() < self.config.left_turn_fraction {
                    LaneKind::Left
                } else {
                    LaneKind::Through
                };
                let lane = LaneId::new(approach, kind);
                let id = self.fresh_id();
                let mut v = Vehicle {
                    id,
                    lane,
                    entry_time: t,
                    exit_time: None,
                    stop_count: 0,
                    halted: false,
                    halted_since: None,
                    stop_line_time: t + travel,
                    waited: 0,
                };
                self.entered += 1;
                record.arrivals.push(Arrival { id, lane });
                let q = &mut self.lanes[lane.index()];
                if q.vehicles.len() < q.capacity && q.upstream.is_empty() {
                    q.vehicles.push_back(v);
                } else {
                    // Link full: the vehicle stands in the upstream buffer.
                    v.halt(t);
                    record.halted.push(id);
                    q.upstream.push_back(v);
                }
            }
        }
    }

    fn discharge(&mut self, t: u32, record: &mut StepRecord) {
        let travel = self.params.travel_time();
        let headway = self.params.saturation_headway;
        let green = self.signal.is_green();
        let phase = self.signal.current_phase;
        for q in &mut self.lanes {
            if green && phase.serves(q.lane) {
                let ready = q.last_discharge.is_none_or(|last| t - last >= headway);
                let at_line = q.vehicles.front().is_some_and(|v| v.stop_line_time <= t);
                if ready && at_line {
                    let mut v = q.vehicles.pop_front().expect("front checked");
                    v.release();
                    v.exit_time = Some(t);
                    q.last_discharge = Some(t);
                    record.departures.push(v.id);
                    self.exited.push(v);
                }
            }
            while q.vehicles.len() < q.capacity {
                let Some(mut v) = q.upstream.pop_front() else { break };
                v.release();
                v.stop_line_time = t + travel;
                record.released.push(v.id);
                q.vehicles.push_back(v);
            }
        }
    }

    fn update_halts(&mut self, t: u32, record: &mut StepRecord) {
        for q in &mut self.lanes {
            for v in q.vehicles.iter_mut() {
                if !v.halted && v.stop_line_time <= t {
                    v.halt(t);
                    record.halted.push(v.id);
                }
            }
            for v in q.vehicles.iter_mut().chain(q.upstream.iter_mut()) {
                if v.halted {
                    v.waited += 1;
                }
            }
        }
    }

    /// Per-lane `[q, w, n, v, o]` in [`LaneId::ALL`] order.
    pub fn observe(&self) -> [LaneFeatures; 8] {
        let free_flow = self.params.free_flow_speed;
        let capacity = self.params.lane_capacity as f64;
        self.lanes.each_ref().map(|q| {
            let halted = q.all().filter(|v| v.halted);
            let (queue, wait) = halted.fold((0.0, 0.0), |(n, w), v| (n + 1.0, w + f64::from(v.waited)));
            let count = q.vehicles.len();
            let moving = q.vehicles.iter().filter(|v| !v.halted).count();
            let speed = if count == 0 {
                free_flow
            } else {
                free_flow * moving as f64 / count as f64
            };
            LaneFeatures {
                queue,
                wait,
                count: count as f64,
                speed,
                occupancy: count as f64 / capacity,
            }
        })
    }
}
