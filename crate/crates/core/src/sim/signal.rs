use std::fmt;

use serde::{Deserialize, Serialize};

use super::geometry::PhaseId;

/// Signal timing bounds, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalTiming {
    pub min_green: u32,
    pub max_green: u32,
    pub yellow: u32,
}

impl Default for SignalTiming {
    fn default() -> Self {
        Self {
            min_green: 10,
            max_green: 45,
            yellow: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interval {
    Green,
    Yellow,
}

/// A control action: keep or extend the current green, or switch (through yellow) to another phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignalCommand {
    Hold,
    Extend { duration: u32 },
    Switch { target: PhaseId },
}

impl SignalCommand {
    pub fn extend(duration: u32) -> Self {
        SignalCommand::Extend { duration }
    }

    pub fn switch(target: PhaseId) -> Self {
        SignalCommand::Switch { target }
    }

    /// The phase that is green after this command takes effect.
    pub fn resulting_phase(self, current: PhaseId) -> PhaseId {
        match self {
            SignalCommand::Switch { target } => target,
            _ => current,
        }
    }
}

impl fmt::Display for SignalCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalCommand::Hold => f.write_str("Hold"),
            SignalCommand::Extend { duration } => write!(f, "Extend({duration}s)"),
            SignalCommand::Switch { target } => write!(f, "Switch({target})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalHead {
    pub current_phase: PhaseId,
    pub interval: Interval,
    pub elapsed_in_interval: u32,
    /// Seconds of green shown for `current_phase`; frozen during yellow.
    pub elapsed_green: u32,
    pub pending_phase: Option<PhaseId>,
}

impl SignalHead {
    pub fn new(phase: PhaseId) -> Self {
        Self {
            current_phase: phase,
            interval: Interval::Green,
            elapsed_in_interval: 0,
            elapsed_green: 0,
            pending_phase: None,
        }
    }

    /// A head that has shown `phase` green for `elapsed` seconds.
    pub fn green(phase: PhaseId, elapsed: u32) -> Self {
        Self {
            elapsed_in_interval: elapsed,
            elapsed_green: elapsed,
            ..Self::new(phase)
        }
    }

    pub fn is_green(&self) -> bool {
        self.interval == Interval::Green
    }

    pub(crate) fn begin_yellow(&mut self, target: PhaseId) {
        self.interval = Interval::Yellow;
        self.pending_phase = Some(target);
        self.elapsed_in_interval = 0;
    }

    /// Advance one second.
    pub(crate) fn tick(&mut self, yellow: u32) {
        self.elapsed_in_interval += 1;
        match self.interval {
            Interval::Green => self.elapsed_green += 1,
            Interval::Yellow => {
                if self.elapsed_in_interval >= yellow {
                    self.current_phase = self
                        .pending_phase
                        .take()
                        .expect("yellow interval without a pending phase");
                    self.interval = Interval::Green;
                    self.elapsed_in_interval = 0;
                    self.elapsed_green = 0;
                }
            }
        }
    }
}
