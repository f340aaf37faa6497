//! Direction-normalized relay lanes and candidate path enumeration.
//!
//! A leftward problem is the mirror image of a rightward one, so both are
//! solved on a [`Lane`] whose positions run in the direction of travel.
//! Position `i` of a rightward lane is cell `i`; of a leftward lane, cell
//! `n - 1 - i`. Lane link `i` joins positions `i` and `i + 1`.

use serde::{Deserialize, Serialize};

use crate::channel::RoundTimings;
use crate::error::{Error, Result};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rightward,
    Leftward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Rightward, Direction::Leftward];
}

/// Data volumes that weight the scheduling objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVolumes {
    /// `Ñ_l`, volume of each cell's uploader set.
    pub intra: Vec<f64>,
    /// Volume of the relay client of region `(l, l + 1)`.
    pub roc: Vec<f64>,
}

impl CellVolumes {
    pub fn uniform(num_cells: usize, volume: f64) -> Self {
        Self {
            intra: vec![volume; num_cells],
            roc: vec![0.0; num_cells.saturating_sub(1)],
        }
    }

    pub fn from_topology(topology: &Topology) -> Self {
        Self {
            intra: (0..topology.num_cells())
                .map(|l| topology.intra_volume(l) as f64)
                .collect(),
            roc: (0..topology.num_cells().saturating_sub(1))
                .map(|r| {
                    if r < topology.roc_of.len() {
                        topology.roc_volume(r) as f64
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.intra.len()
    }

    /// `N̂_j` of cell `j` as seen by destination `l`: the intra volume plus
    /// the relay client that merges into streams leaving `j` towards `l`.
    pub fn weight(&self, j: usize, l: usize) -> f64 {
        use std::cmp::Ordering::*;
        let roc = |r: usize| self.roc.get(r).copied().unwrap_or(0.0);
        match j.cmp(&l) {
            Less => self.intra[j] + roc(j),
            Equal => self.intra[j],
            Greater => self.intra[j] + roc(j - 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.intra.len();
        if n == 0 || self.roc.len() + 1 != n {
            return Err(Error::Domain("volumes need one entry per cell and per region".into()));
        }
        if self.intra.iter().any(|&v| !(v > 0.0)) || self.roc.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("volumes must be positive".into()));
        }
        Ok(())
    }
}

/// Which adjacent links can finish one immediate hop within the budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkActivity {
    /// `right[l]`: link `l -> l + 1`.
    pub right: Vec<bool>,
    /// `left[l]`: link `l + 1 -> l`.
    pub left: Vec<bool>,
}

/// `p^(j,j±1) = 1` iff `t_cast(j) + t_comp(j) + t_com ≤ T_max`.
pub fn adjacent_feasibility(timings: &RoundTimings) -> LinkActivity {
    let links = timings.num_cells().saturating_sub(1);
    LinkActivity {
        right: (0..links)
            .map(|l| timings.ready(l) + timings.t_com_right[l] <= timings.t_max)
            .collect(),
        left: (0..links)
            .map(|l| timings.ready(l + 1) + timings.t_com_left[l] <= timings.t_max)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayPath {
    pub direction: Direction,
    pub start_cell: usize,
    pub end_cell: usize,
    /// Consecutive cells in travel order.
    pub node_list: Vec<usize>,
    /// Volume gathered at the end cell: every relayed cell's `N̂` plus the
    /// end cell's own intra volume.
    pub weight: f64,
}

impl RelayPath {
    pub fn hops(&self) -> usize {
        self.node_list.len() - 1
    }
}

/// One direction of the scheduling problem in lane coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub direction: Direction,
    pub ready: Vec<f64>,
    /// Relay time of lane link `i`.
    pub t_com: Vec<f64>,
    pub active: Vec<bool>,
    /// `N̂` of the cell at each position when relayed forward.
    pub origin_weight: Vec<f64>,
    /// Intra volume of the cell at each position.
    pub own_weight: Vec<f64>,
    pub t_max: f64,
}

impl Lane {
    pub fn new(direction: Direction, timings: &RoundTimings, volumes: &CellVolumes) -> Self {
        let n = timings.num_cells();
        let activity = adjacent_feasibility(timings);
        let mut lane = Lane {
            direction,
            ready: Vec::with_capacity(n),
            t_com: Vec::with_capacity(n.saturating_sub(1)),
            active: Vec::with_capacity(n.saturating_sub(1)),
            origin_weight: Vec::with_capacity(n),
            own_weight: Vec::with_capacity(n),
            t_max: timings.t_max,
        };
        for i in 0..n {
            let cell = lane_cell(direction, n, i);
            lane.ready.push(timings.ready(cell));
            lane.own_weight.push(volumes.intra[cell]);
            let towards = match direction {
                Direction::Rightward => n - 1,
                Direction::Leftward => 0,
            };
            lane.origin_weight.push(if cell == towards {
                volumes.intra[cell]
            } else {
                volumes.weight(cell, towards)
            });
        }
        for i in 0..n.saturating_sub(1) {
            let (t, a) = match direction {
                Direction::Rightward => (timings.t_com_right[i], activity.right[i]),
                Direction::Leftward => {
                    let link = n - 2 - i;
                    (timings.t_com_left[link], activity.left[link])
                }
            };
            lane.t_com.push(t);
            lane.active.push(a);
        }
        lane
    }

    pub fn len(&self) -> usize {
        self.ready.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ready.is_empty()
    }

    /// Global cell at lane position `i`.
    pub fn cell(&self, i: usize) -> usize {
        lane_cell(self.direction, self.len(), i)
    }

    /// Lane position of a global cell (the mapping is an involution).
    pub fn position(&self, cell: usize) -> usize {
        lane_cell(self.direction, self.len(), cell)
    }

    /// Lane positions `(first, last)` of a path in this lane.
    pub fn span(&self, path: &RelayPath) -> (usize, usize) {
        (self.position(path.start_cell), self.position(path.end_cell))
    }

    pub fn path(&self, first: usize, last: usize) -> RelayPath {
        let node_list: Vec<usize> = (first..=last).map(|i| self.cell(i)).collect();
        let weight = (first..last).map(|i| self.origin_weight[i]).sum::<f64>() + self.own_weight[last];
        RelayPath {
            direction: self.direction,
            start_cell: self.cell(first),
            end_cell: self.cell(last),
            node_list,
            weight,
        }
    }
}

pub(crate) fn lane_cell(direction: Direction, n: usize, i: usize) -> usize {
    match direction {
        Direction::Rightward => i,
        Direction::Leftward => n - 1 - i,
    }
}

/// Multi-hop paths that a lone stream starting at its origin's readiness
/// could complete within `T_max`, each hop on an active link.
///
/// For every start the longest such path is simulated hop by hop (a hop
/// departs once the stream has arrived and the relaying cell is ready) and
/// all its prefixes of two or more cells are emitted. Output is ordered by
/// lane start, then by length.
pub fn enumerate_candidate_paths(lane: &Lane) -> Vec<RelayPath> {
    let n = lane.len();
    let mut out = Vec::new();
    for first in 0..n.saturating_sub(1) {
        let mut depart = lane.ready[first];
        let mut i = first;
        while i + 1 < n && lane.active[i] {
            let arrive = depart + lane.t_com[i];
            if arrive > lane.t_max {
                break;
            }
            out.push(lane.path(first, i + 1));
            depart = arrive.max(lane.ready[i + 1]);
            i += 1;
        }
    }
    out
}
