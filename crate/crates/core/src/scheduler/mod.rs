//! Relay scheduling along the chain.
//!
//! Each direction is an independent lane: candidate multi-hop paths are
//! enumerated, conflicting pairs form a graph, and a high-utility
//! independent set is chosen by greedy selection, gap filling and local
//! search. Chosen paths are then given hop start times.

mod conflict;
mod oracle;
mod paths;
mod plan;
mod replay;
mod search;

use serde::{Deserialize, Serialize};

pub use conflict::{build_conflict_graph, ConflictGraph, ConflictRule};
pub use oracle::{exhaustive_oracle, OracleSolution, ORACLE_VERTEX_LIMIT};
pub use paths::{adjacent_feasibility, enumerate_candidate_paths, CellVolumes, Direction, Lane, LinkActivity, RelayPath};
pub use plan::{
    aggregate_utility, assign_start_times, derive_participation, Forwarding, ParticipationMatrix, SchedulePlan,
};
pub use replay::{replay_plan, ReplayOutcome};
pub use search::{fill_gaps, greedy_initial_set, lane_utility, local_search, set_utility, LaneSearch, Sweeps};

use crate::channel::RoundTimings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub conflict: ConflictRule,
    pub sweeps: Sweeps,
    /// Replaces the round budget when set.
    pub tmax_override: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Heuristic,
    Exhaustive,
}

/// Everything decided for one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSolution {
    pub direction: Direction,
    pub graph: ConflictGraph,
    pub initial: Vec<usize>,
    pub initial_utility: f64,
    pub selected: Vec<usize>,
    pub full: Vec<usize>,
    /// This direction's share of the objective.
    pub utility: f64,
}

impl LaneSolution {
    pub fn scheduled_paths(&self) -> Vec<RelayPath> {
        self.full.iter().map(|&v| self.graph.vertices[v].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub plan: SchedulePlan,
    pub participation: ParticipationMatrix,
    pub utility: f64,
    pub lanes: Vec<LaneSolution>,
}

pub fn effective_timings(timings: &RoundTimings, cfg: &SchedulerConfig) -> Result<RoundTimings> {
    timings.validate()?;
    let mut t = timings.clone();
    if let Some(t_max) = cfg.tmax_override {
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(Error::Domain(format!("budget override {t_max} must be finite and nonnegative")));
        }
        t.t_max = t_max;
    }
    Ok(t)
}

pub fn solve_lane(
    direction: Direction,
    timings: &RoundTimings,
    volumes: &CellVolumes,
    cfg: &SchedulerConfig,
    solver: Solver,
) -> Result<LaneSolution> {
    let lane = Lane::new(direction, timings, volumes);
    let graph = build_conflict_graph(&lane, enumerate_candidate_paths(&lane), cfg.conflict);
    let initial = greedy_initial_set(&graph);
    let (selected, full, utility, initial_utility) = match solver {
        Solver::Heuristic => {
            let s = local_search(&lane, &graph, &initial, cfg.sweeps);
            (s.selected, s.full, s.utility, s.initial_utility)
        }
        Solver::Exhaustive => {
            let o = exhaustive_oracle(&lane, &graph)?;
            let (_, u_ini) = fill_gaps(&lane, &graph, &initial);
            (o.selected, o.full, o.utility, u_ini)
        }
    };
    Ok(LaneSolution { direction, graph, initial, initial_utility, selected, full, utility })
}

/// Solves the requested directions and assembles a plan. Directions left
/// out get no relaying.
pub fn solve_directions(
    timings: &RoundTimings,
    volumes: &CellVolumes,
    cfg: &SchedulerConfig,
    solver: Solver,
    directions: &[Direction],
) -> Result<Schedule> {
    let timings = effective_timings(timings, cfg)?;
    volumes.validate()?;
    if volumes.num_cells() != timings.num_cells() {
        return Err(Error::Domain("volumes and timings disagree on the number of cells".into()));
    }
    let mut lanes = Vec::with_capacity(directions.len());
    for &d in directions {
        lanes.push(solve_lane(d, &timings, volumes, cfg, solver)?);
    }
    let paths: Vec<RelayPath> = lanes.iter().flat_map(LaneSolution::scheduled_paths).collect();
    let plan = assign_start_times(&paths, &timings)?;
    let participation = derive_participation(&plan, &timings);
    let utility = aggregate_utility(&participation, volumes);
    Ok(Schedule { plan, participation, utility, lanes })
}

pub fn solve(timings: &RoundTimings, volumes: &CellVolumes, cfg: &SchedulerConfig) -> Result<Schedule> {
    solve_directions(timings, volumes, cfg, Solver::Heuristic, &Direction::BOTH)
}

/// Sum over all origin/destination pairs of `N̂`; `U + W` is twice the
/// volume that reaches its destinations and is never negative.
pub fn utility_span(volumes: &CellVolumes) -> f64 {
    let n = volumes.num_cells();
    (0..n).flat_map(|l| (0..n).map(move |j| (j, l))).map(|(j, l)| volumes.weight(j, l)).sum()
}
