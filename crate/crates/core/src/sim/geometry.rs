//! Intersection layout: four approaches, two lanes each, four signal phases.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproachId {
    North,
    South,
    East,
    West,
}

impl ApproachId {
    /// Canonical flattening order.
    pub const ALL: [ApproachId; 4] = [
        ApproachId::North,
        ApproachId::South,
        ApproachId::East,
        ApproachId::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ApproachId::North => "north",
            ApproachId::South => "south",
            ApproachId::East => "east",
            ApproachId::West => "west",
        }
    }

    pub fn group(self) -> DirectionGroup {
        match self {
            ApproachId::North | ApproachId::South => DirectionGroup::NorthSouth,
            ApproachId::East | ApproachId::West => DirectionGroup::EastWest,
        }
    }
}

/// The two opposing-approach pairs that share a phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionGroup {
    NorthSouth,
    EastWest,
}

impl DirectionGroup {
    pub fn approaches(self) -> [ApproachId; 2] {
        match self {
            DirectionGroup::NorthSouth => [ApproachId::North, ApproachId::South],
            DirectionGroup::EastWest => [ApproachId::East, ApproachId::West],
        }
    }

    /// Human-readable label used in diagnoses ("north-south").
    pub fn label(self) -> &'static str {
        match self {
            DirectionGroup::NorthSouth => "north-south",
            DirectionGroup::EastWest => "east-west",
        }
    }

    pub fn through_phase(self) -> PhaseId {
        match self {
            DirectionGroup::NorthSouth => PhaseId::NsGreen,
            DirectionGroup::EastWest => PhaseId::EwGreen,
        }
    }

    pub fn other(self) -> DirectionGroup {
        match self {
            DirectionGroup::NorthSouth => DirectionGroup::EastWest,
            DirectionGroup::EastWest => DirectionGroup::NorthSouth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneKind {
    Through,
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneId {
    pub approach: ApproachId,
    pub kind: LaneKind,
}

impl LaneId {
    pub const fn new(approach: ApproachId, kind: LaneKind) -> Self {
        Self { approach, kind }
    }

    /// All eight lanes, approach-major, through before left.
    pub const ALL: [LaneId; 8] = [
        LaneId::new(ApproachId::North, LaneKind::Through),
        LaneId::new(ApproachId::North, LaneKind::Left),
        LaneId::new(ApproachId::South, LaneKind::Through),
        LaneId::new(ApproachId::South, LaneKind::Left),
        LaneId::new(ApproachId::East, LaneKind::Through),
        LaneId::new(ApproachId::East, LaneKind::Left),
        LaneId::new(ApproachId::West, LaneKind::Through),
        LaneId::new(ApproachId::West, LaneKind::Left),
    ];

    pub fn index(self) -> usize {
        self.approach.index() * 2
            + match self.kind {
                LaneKind::Through => 0,
                LaneKind::Left => 1,
            }
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            LaneKind::Through => "through",
            LaneKind::Left => "left",
        };
        write!(f, "{}.{}", self.approach.name(), kind)
    }
}

/// Signal phases. Declaration order is the tie-break and round-robin order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseId {
    #[serde(rename = "NS_Green")]
    NsGreen,
    #[serde(rename = "EW_Green")]
    EwGreen,
    #[serde(rename = "NS_Left")]
    NsLeft,
    #[serde(rename = "EW_Left")]
    EwLeft,
}

impl PhaseId {
    pub const ALL: [PhaseId; 4] = [
        PhaseId::NsGreen,
        PhaseId::EwGreen,
        PhaseId::NsLeft,
        PhaseId::EwLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseId::NsGreen => "NS_Green",
            PhaseId::EwGreen => "EW_Green",
            PhaseId::NsLeft => "NS_Left",
            PhaseId::EwLeft => "EW_Left",
        }
    }

    pub fn from_name(name: &str) -> Option<PhaseId> {
        PhaseId::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn group(self) -> DirectionGroup {
        match self {
            PhaseId::NsGreen | PhaseId::NsLeft => DirectionGroup::NorthSouth,
            PhaseId::EwGreen | PhaseId::EwLeft => DirectionGroup::EastWest,
        }
    }

    pub fn lane_kind(self) -> LaneKind {
        match self {
            PhaseId::NsGreen | PhaseId::EwGreen => LaneKind::Through,
            PhaseId::NsLeft | PhaseId::EwLeft => LaneKind::Left,
        }
    }

    /// L(a): the lanes this phase gives right of way to.
    pub fn served(self) -> [LaneId; 2] {
        let [a, b] = self.group().approaches();
        let kind = self.lane_kind();
        [LaneId::new(a, kind), LaneId::new(b, kind)]
    }

    pub fn serves(self, lane: LaneId) -> bool {
        self.served().contains(&lane)
    }

    /// Next phase in round-robin order NS_Green → EW_Green → NS_Left → EW_Left.
    pub fn next_round_robin(self) -> PhaseId {
        PhaseId::ALL[(self.index() + 1) % 4]
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per approach, serialized with named fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerApproach<T> {
    pub north: T,
    pub south: T,
    pub east: T,
    pub west: T,
}

impl<T> PerApproach<T> {
    pub fn from_fn(mut f: impl FnMut(ApproachId) -> T) -> Self {
        Self {
            north: f(ApproachId::North),
            south: f(ApproachId::South),
            east: f(ApproachId::East),
            west: f(ApproachId::West),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(ApproachId, &T) -> U) -> PerApproach<U> {
        PerApproach::from_fn(|a| f(a, &self[a]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ApproachId, &T)> {
        ApproachId::ALL.into_iter().map(move |a| (a, &self[a]))
    }
}

impl<T> Index<ApproachId> for PerApproach<T> {
    type Output = T;

    fn index(&self, a: ApproachId) -> &T {
        match a {
            ApproachId::North => &self.north,
            ApproachId::South => &self.south,
            ApproachId::East => &self.east,
            ApproachId::West => &self.west,
        }
    }
}

impl<T> IndexMut<ApproachId> for PerApproach<T> {
    fn index_mut(&mut self, a: ApproachId) -> &mut T {
        match a {
            ApproachId::North => &mut self.north,
            ApproachId::South => &mut self.south,
            ApproachId::East => &mut self.east,
            ApproachId::West => &mut self.west,
        }
    }
}
