//! Relay start times and the participation they imply.

use serde::{Deserialize, Serialize};

use super::paths::{Direction, Lane, RelayPath};
use crate::channel::RoundTimings;
use crate::error::{Error, Result};

/// What an ES puts into an outgoing relay stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Forwarding {
    /// Its intra model merged with any same-direction stream already received.
    #[default]
    Aggregate,
    /// Only its own intra model; streams never extend past one hop.
    OwnOnly,
}

/// Start time of every scheduled hop. A link without a start time is inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub forwarding: Forwarding,
    /// `start_right[l]`: departure on link `l -> l + 1`.
    pub start_right: Vec<Option<f64>>,
    /// `start_left[l]`: departure on link `l + 1 -> l`.
    pub start_left: Vec<Option<f64>>,
    /// Final aggregation time of each ES.
    pub t_agg: Vec<f64>,
    pub t_max: f64,
}

impl SchedulePlan {
    /// No relaying at all.
    pub fn identity(timings: &RoundTimings) -> Self {
        let links = timings.num_cells().saturating_sub(1);
        let mut plan = Self {
            forwarding: Forwarding::Aggregate,
            start_right: vec![None; links],
            start_left: vec![None; links],
            t_agg: Vec::new(),
            t_max: timings.t_max,
        };
        plan.t_agg = plan.aggregation_times(timings);
        plan
    }

    /// Every feasible adjacent link fires as soon as its sender is ready,
    /// carrying only the sender's own model.
    pub fn immediate_one_hop(timings: &RoundTimings) -> Self {
        let activity = super::adjacent_feasibility(timings);
        let links = timings.num_cells().saturating_sub(1);
        let mut plan = Self {
            forwarding: Forwarding::OwnOnly,
            start_right: (0..links)
                .map(|l| activity.right[l].then(|| timings.ready(l)))
                .collect(),
            start_left: (0..links)
                .map(|l| activity.left[l].then(|| timings.ready(l + 1)))
                .collect(),
            t_agg: Vec::new(),
            t_max: timings.t_max,
        };
        plan.t_agg = plan.aggregation_times(timings);
        plan
    }

    pub fn num_cells(&self) -> usize {
        self.t_agg.len()
    }

    pub fn start(&self, direction: Direction, link: usize) -> Option<f64> {
        match direction {
            Direction::Rightward => self.start_right[link],
            Direction::Leftward => self.start_left[link],
        }
    }

    pub fn link_active_right(&self) -> Vec<bool> {
        self.start_right.iter().map(Option::is_some).collect()
    }

    pub fn link_active_left(&self) -> Vec<bool> {
        self.start_left.iter().map(Option::is_some).collect()
    }

    /// `t_agg(l) = max(ready(l), latest arrival on an active incoming link)`.
    pub fn aggregation_times(&self, timings: &RoundTimings) -> Vec<f64> {
        let n = timings.num_cells();
        (0..n)
            .map(|l| {
                let mut t = timings.ready(l);
                if l > 0 {
                    if let Some(s) = self.start_right[l - 1] {
                        t = t.max(s + timings.t_com_right[l - 1]);
                    }
                }
                if l + 1 < n {
                    if let Some(s) = self.start_left[l] {
                        t = t.max(s + timings.t_com_left[l]);
                    }
                }
                t
            })
            .collect()
    }

    /// Latest moment any ES finishes aggregating.
    pub fn wall_time(&self) -> f64 {
        self.t_agg.iter().copied().fold(0.0, f64::max)
    }
}

/// Turns a conflict-free set of paths into hop start times. Each hop departs
/// once the previous hop of its path has arrived and the relaying ES is
/// ready; the first hop leaves at the origin's readiness.
pub fn assign_start_times(paths: &[RelayPath], timings: &RoundTimings) -> Result<SchedulePlan> {
    let mut plan = SchedulePlan::identity(timings);
    for path in paths {
        let mut depart = timings.ready(path.start_cell);
        for w in path.node_list.windows(2) {
            let (from, to) = (w[0], w[1]);
            let (slot, t_com) = if to == from + 1 {
                (&mut plan.start_right[from], timings.t_com_right[from])
            } else if from == to + 1 {
                (&mut plan.start_left[to], timings.t_com_left[to])
            } else {
                return Err(Error::InfeasibleSchedule(format!(
                    "path hop {from} -> {to} is not between adjacent cells"
                )));
            };
            depart = depart.max(timings.ready(from));
            if slot.is_some() {
                return Err(Error::InfeasibleSchedule(format!(
                    "link {from} -> {to} is used by two paths"
                )));
            }
            *slot = Some(depart);
            let arrive = depart + t_com;
            if arrive > timings.t_max {
                return Err(Error::InfeasibleSchedule(format!(
                    "hop {from} -> {to} arrives at {arrive} after the budget {}",
                    timings.t_max
                )));
            }
            depart = arrive;
        }
    }
    plan.t_agg = plan.aggregation_times(timings);
    Ok(plan)
}

/// Square 0/1 matrix; entry `(j, l)` says cell `j`'s model reaches ES `l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<u8>>", try_from = "Vec<Vec<u8>>")]
pub struct ParticipationMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl ParticipationMatrix {
    pub fn identity(n: usize) -> Self {
        let mut m = Self { n, cells: vec![false; n * n] };
        for l in 0..n {
            m.set(l, l, true);
        }
        m
    }

    pub fn num_cells(&self) -> usize {
        self.n
    }

    pub fn get(&self, origin: usize, dest: usize) -> bool {
        self.cells[origin * self.n + dest]
    }

    pub fn set(&mut self, origin: usize, dest: usize, value: bool) {
        self.cells[origin * self.n + dest] = value;
    }

    /// Number of ES aggregates each origin reaches, its own included.
    pub fn reach_counts(&self) -> Vec<usize> {
        (0..self.n)
            .map(|j| (0..self.n).filter(|&l| self.get(j, l)).count())
            .collect()
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|&b| b)
    }

    /// No model travels more than one hop.
    pub fn is_tridiagonal(&self) -> bool {
        (0..self.n).all(|j| (0..self.n).all(|l| !self.get(j, l) || j.abs_diff(l) <= 1))
    }
}

impl From<ParticipationMatrix> for Vec<Vec<u8>> {
    fn from(m: ParticipationMatrix) -> Self {
        (0..m.n)
            .map(|j| (0..m.n).map(|l| u8::from(m.get(j, l))).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<u8>>> for ParticipationMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<u8>>) -> std::result::Result<Self, String> {
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err("participation matrix must be square".into());
            }
            for &b in row {
                match b {
                    0 => cells.push(false),
                    1 => cells.push(true),
                    _ => return Err(format!("participation entry {b} is not 0 or 1")),
                }
            }
        }
        Ok(Self { n, cells })
    }
}

/// Algebraic participation of a plan. The last hop into `l` must arrive by
/// `T_max`; an earlier cell also reaches `l` when every hop of the chain
/// lands before the next hop departs, so the next stream carries it.
pub fn derive_participation(plan: &SchedulePlan, timings: &RoundTimings) -> ParticipationMatrix {
    let n = timings.num_cells();
    let mut m = ParticipationMatrix::identity(n);
    let chains = plan.forwarding == Forwarding::Aggregate;
    for direction in Direction::BOTH {
        let lane = Lane::new(direction, timings, &super::CellVolumes::uniform(n, 1.0));
        let start = |i: usize| plan.start(direction, lane_link(direction, n, i));
        for dest in 1..n {
            let last = dest - 1;
            let Some(s) = start(last) else { continue };
            if s + lane.t_com[last] > timings.t_max {
                continue;
            }
            m.set(lane.cell(last), lane.cell(dest), true);
            if !chains {
                continue;
            }
            let mut q = last;
            while q > 0 {
                let (Some(prev), Some(next)) = (start(q - 1), start(q)) else { break };
                if prev + lane.t_com[q - 1] > next {
                    break;
                }
                q -= 1;
                m.set(lane.cell(q), lane.cell(dest), true);
            }
        }
    }
    m
}

/// Global link index of lane link `i`.
pub(crate) fn lane_link(direction: Direction, n: usize, i: usize) -> usize {
    match direction {
        Direction::Rightward => i,
        Direction::Leftward => n - 2 - i,
    }
}

/// `U = Σ_l Σ_j (2 p^(j,l) − 1) N̂_j^(l)`.
pub fn aggregate_utility(m: &ParticipationMatrix, volumes: &super::CellVolumes) -> f64 {
    let n = m.num_cells();
    let mut u = 0.0;
    for l in 0..n {
        for j in 0..n {
            let sign = if m.get(j, l) { 1.0 } else { -1.0 };
            u += sign * volumes.weight(j, l);
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::CellVolumes;

    fn timings(ready: &[f64], right: &[f64], left: &[f64], t_max: f64) -> RoundTimings {
        RoundTimings {
            t_cast: vec![0.0; ready.len()],
            t_comp: ready.to_vec(),
            t_com_right: right.to_vec(),
            t_com_left: left.to_vec(),
            t_max,
        }
    }

    fn path(nodes: &[usize]) -> RelayPath {
        let dir = if nodes[1] > nodes[0] { Direction::Rightward } else { Direction::Leftward };
        RelayPath {
            direction: dir,
            start_cell: nodes[0],
            end_cell: *nodes.last().unwrap(),
            node_list: nodes.to_vec(),
            weight: 0.0,
        }
    }

    #[test]
    fn identity_matrix_utility() {
        let m = ParticipationMatrix::identity(3);
        let u = aggregate_utility(&m, &CellVolumes::uniform(3, 2.0));
        assert_eq!(u, 3.0 * (2.0 - 4.0));
        let mut full = m.clone();
        for j in 0..3 {
            for l in 0..3 {
                full.set(j, l, true);
            }
        }
        assert_eq!(aggregate_utility(&full, &CellVolumes::uniform(3, 2.0)), 18.0);
    }

    #[test]
    fn matrix_serializes_as_rows() {
        let mut m = ParticipationMatrix::identity(2);
        m.set(0, 1, true);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1,1],[0,1]]");
        let back: ParticipationMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ParticipationMatrix>("[[1,2],[0,1]]").is_err());
        assert!(serde_json::from_str::<ParticipationMatrix>("[[1],[0,1]]").is_err());
    }

    #[test]
    fn start_times_follow_readiness() {
        let t = timings(&[0.0, 3.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 10.0);
        let plan = assign_start_times(&[path(&[0, 1, 2])], &t).unwrap();
        assert_eq!(plan.start_right, vec![Some(0.0), Some(3.0)]);
        assert_eq!(plan.start_left, vec![None, None]);
        assert_eq!(plan.t_agg, vec![0.0, 3.0, 4.0]);
        let m = derive_participation(&plan, &t);
        assert!(m.get(0, 2) && m.get(1, 2) && m.get(0, 1));
        assert!(!m.get(2, 1) && !m.get(2, 0));
    }

    #[test]
    fn late_hop_is_infeasible() {
        let t = timings(&[0.0, 0.0], &[2.0], &[2.0], 1.0);
        let err = assign_start_times(&[path(&[0, 1])], &t).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSchedule(_)));
    }

    #[test]
    fn shared_link_is_infeasible() {
        let t = timings(&[0.0, 0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 10.0);
        let err = assign_start_times(&[path(&[0, 1, 2]), path(&[1, 2])], &t).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSchedule(_)));
    }

    #[test]
    fn chain_breaks_when_next_hop_leaves_early() {
        // two separate paths 0->1 and 1->2: the second leaves at ready(1)=0
        // before the first arrives at 1, so cell 0 does not reach 2
        let t = timings(&[0.0, 0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 10.0);
        let plan = assign_start_times(&[path(&[0, 1]), path(&[1, 2])], &t).unwrap();
        let m = derive_participation(&plan, &t);
        assert!(m.get(0, 1) && m.get(1, 2));
        assert!(!m.get(0, 2));
    }

    #[test]
    fn one_hop_plan_is_tridiagonal() {
        let t = timings(&[0.0, 0.0, 0.0, 0.0], &[0.1; 3], &[0.1; 3], 10.0);
        let plan = SchedulePlan::immediate_one_hop(&t);
        let m = derive_participation(&plan, &t);
        assert!(m.is_tridiagonal());
        assert_eq!(m.reach_counts(), vec![2, 3, 3, 2]);
    }

    #[test]
    fn leftward_chain() {
        let t = timings(&[0.0, 0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 2.0);
        let plan = assign_start_times(&[path(&[2, 1, 0])], &t).unwrap();
        assert_eq!(plan.start_left, vec![Some(1.0), Some(0.0)]);
        let m = derive_participation(&plan, &t);
        assert!(m.get(2, 0) && m.get(1, 0) && m.get(2, 1));
        assert_eq!(m.reach_counts(), vec![1, 2, 3]);
    }
}
