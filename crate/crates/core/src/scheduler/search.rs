//! Greedy selection, gap filling and swap-based local search over one lane.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::conflict::ConflictGraph;
use super::paths::{Lane, RelayPath};

/// How many passes local search makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sweeps {
    /// One pass over the initial set.
    #[default]
    Single,
    /// Repeat passes until no swap improves.
    FixedPoint,
}

/// Selection priority: weight desc, length desc, start cell asc.
pub fn priority(a: &RelayPath, b: &RelayPath) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(b.node_list.len().cmp(&a.node_list.len()))
        .then(a.start_cell.cmp(&b.start_cell))
}

fn by_priority(graph: &ConflictGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..graph.len()).collect();
    order.sort_by(|&a, &b| priority(&graph.vertices[a], &graph.vertices[b]).then(a.cmp(&b)));
    order
}

/// Maximal independent set picked in priority order.
pub fn greedy_initial_set(graph: &ConflictGraph) -> Vec<usize> {
    let mut picked = Vec::new();
    for v in by_priority(graph) {
        if graph.compatible(v, &picked) {
            picked.push(v);
        }
    }
    picked
}

/// Hop departures on each lane link for a conflict-free set of paths.
pub fn lane_start_times(lane: &Lane, graph: &ConflictGraph, set: &[usize]) -> Vec<Option<f64>> {
    let mut start = vec![None; lane.len().saturating_sub(1)];
    for &v in set {
        let (first, last) = lane.span(&graph.vertices[v]);
        let mut depart = lane.ready[first];
        for i in first..last {
            depart = depart.max(lane.ready[i]);
            start[i] = Some(depart);
            depart += lane.t_com[i];
        }
    }
    start
}

/// This lane's share of the objective: `Σ_{j before l} (2p − 1) N̂_j` over
/// lane positions, with participation composed from the hop start times.
pub fn lane_utility(lane: &Lane, start: &[Option<f64>]) -> f64 {
    let n = lane.len();
    let mut u = 0.0;
    for dest in 1..n {
        let mut reached_from = dest;
        if let Some(s) = start[dest - 1] {
            if s + lane.t_com[dest - 1] <= lane.t_max {
                reached_from = dest - 1;
                while reached_from > 0 {
                    let q = reached_from;
                    match (start[q - 1], start[q]) {
                        (Some(prev), Some(next)) if prev + lane.t_com[q - 1] <= next => reached_from -= 1,
                        _ => break,
                    }
                }
            }
        }
        for j in 0..dest {
            let sign = if j >= reached_from { 1.0 } else { -1.0 };
            u += sign * lane.origin_weight[j];
        }
    }
    u
}

pub fn set_utility(lane: &Lane, graph: &ConflictGraph, set: &[usize]) -> f64 {
    lane_utility(lane, &lane_start_times(lane, graph, set))
}

/// Completes an independent set by filling the lane segments between its
/// paths. Segments run from position 0 to the first path's start, between
/// one path's end and the next path's start, and from the last end to the
/// final position. Inside each, the best compatible candidate lying within
/// the segment is added until none remains. Returns the completed set and
/// its lane utility.
pub fn fill_gaps(lane: &Lane, graph: &ConflictGraph, set: &[usize]) -> (Vec<usize>, f64) {
    let span = |v: usize| lane.span(&graph.vertices[v]);
    let mut sorted = set.to_vec();
    sorted.sort_by_key(|&v| (span(v).1, span(v).0));
    let mut segments = Vec::with_capacity(sorted.len() + 1);
    let mut prev_end = 0;
    for &v in &sorted {
        let (s, e) = span(v);
        segments.push((prev_end, s));
        prev_end = e;
    }
    segments.push((prev_end, lane.len().saturating_sub(1)));

    let order = by_priority(graph);
    let mut full = sorted;
    for (a, b) in segments {
        if b <= a {
            continue;
        }
        while let Some(&v) = order.iter().find(|&&v| {
            let (s, e) = span(v);
            a <= s && e <= b && graph.compatible(v, &full)
        }) {
            full.push(v);
        }
    }
    let u = set_utility(lane, graph, &full);
    (full, u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSearch {
    pub initial: Vec<usize>,
    pub initial_utility: f64,
    /// Independent set after local search.
    pub selected: Vec<usize>,
    /// `selected` completed by gap filling; the paths actually scheduled.
    pub full: Vec<usize>,
    pub utility: f64,
}

/// Swap-based refinement. For each member `i` of the current set, every
/// vertex `j` that keeps the set independent once `i` is removed is tried;
/// the best strictly improving swap (scored after gap filling) is applied.
pub fn local_search(lane: &Lane, graph: &ConflictGraph, initial: &[usize], sweeps: Sweeps) -> LaneSearch {
    let (init_full, init_u) = fill_gaps(lane, graph, initial);
    let mut best = initial.to_vec();
    let mut best_full = init_full;
    let mut best_u = init_u;
    let mut pass: Vec<usize> = initial.to_vec();
    loop {
        let mut improved = false;
        for &i in &pass {
            let Some(pos) = best.iter().position(|&v| v == i) else { continue };
            let mut rest = best.clone();
            rest.remove(pos);
            let mut swap: Option<(Vec<usize>, Vec<usize>, f64)> = None;
            for j in 0..graph.len() {
                if j == i || !graph.compatible(j, &rest) {
                    continue;
                }
                let mut trial = rest.clone();
                trial.push(j);
                let (full, u) = fill_gaps(lane, graph, &trial);
                let bar = swap.as_ref().map_or(best_u, |s| s.2);
                if u > bar {
                    swap = Some((trial, full, u));
                }
            }
            if let Some((set, full, u)) = swap {
                best = set;
                best_full = full;
                best_u = u;
                improved = true;
            }
        }
        if sweeps == Sweeps::Single || !improved {
            break;
        }
        pass = best.clone();
    }
    LaneSearch {
        initial: initial.to_vec(),
        initial_utility: init_u,
        selected: best,
        full: best_full,
        utility: best_u,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RoundTimings;
    use crate::scheduler::conflict::{build_conflict_graph, ConflictRule};
    use crate::scheduler::{enumerate_candidate_paths, CellVolumes, Direction};

    fn uniform_lane(n: usize, t_max: f64) -> Lane {
        let t = RoundTimings {
            t_cast: vec![0.0; n],
            t_comp: vec![0.0; n],
            t_com_right: vec![1.0; n - 1],
            t_com_left: vec![1.0; n - 1],
            t_max,
        };
        Lane::new(Direction::Rightward, &t, &CellVolumes::uniform(n, 1.0))
    }

    fn weighted(lane: &Lane, spans: &[(usize, usize, f64)], edges: &[(usize, usize)]) -> ConflictGraph {
        let paths = spans
            .iter()
            .map(|&(s, e, w)| RelayPath { weight: w, ..lane.path(s, e) })
            .collect();
        ConflictGraph::from_edges(paths, edges.to_vec())
    }

    #[test]
    fn greedy_skips_conflicts() {
        let lane = uniform_lane(4, 10.0);
        let g = weighted(&lane, &[(0, 1, 10.0), (1, 2, 8.0), (2, 3, 6.0)], &[(0, 1)]);
        assert_eq!(greedy_initial_set(&g), vec![0, 2]);
    }

    #[test]
    fn greedy_edge_cases() {
        let lane = uniform_lane(4, 10.0);
        let g = weighted(&lane, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], &[]);
        let mut all = greedy_initial_set(&g);
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        let empty = build_conflict_graph(&lane, vec![], ConflictRule::Link);
        assert!(greedy_initial_set(&empty).is_empty());
    }

    #[test]
    fn greedy_breaks_ties_by_length_then_start() {
        let lane = uniform_lane(5, 10.0);
        let g = weighted(&lane, &[(2, 3, 5.0), (0, 1, 5.0), (0, 2, 5.0)], &[]);
        let order = by_priority(&g);
        assert_eq!(order, vec![2, 1, 0]);
    }

    #[test]
    fn fill_adds_gap_path() {
        let lane = uniform_lane(4, 10.0);
        let g = build_conflict_graph(&lane, vec![lane.path(0, 1), lane.path(2, 3)], ConflictRule::Link);
        let (full, _) = fill_gaps(&lane, &g, &[0]);
        assert_eq!(full, vec![0, 1]);
        // a set that already spans the lane is unchanged
        let g = build_conflict_graph(&lane, vec![lane.path(0, 3), lane.path(1, 2)], ConflictRule::Link);
        let (full, _) = fill_gaps(&lane, &g, &[0]);
        assert_eq!(full, vec![0]);
    }

    #[test]
    fn identity_lane_utility() {
        let lane = uniform_lane(4, 10.0);
        let u = lane_utility(&lane, &[None, None, None]);
        // 1 + 2 + 3 origins excluded with weight 1
        assert_eq!(u, -6.0);
    }

    #[test]
    fn uniform_enumeration_reaches_three_hops() {
        let lane = uniform_lane(5, 3.0);
        let paths = enumerate_candidate_paths(&lane);
        let longest = paths.iter().filter(|p| p.start_cell == 0).map(|p| p.end_cell).max();
        assert_eq!(longest, Some(3));
    }

    #[test]
    fn local_search_never_decreases() {
        let lane = uniform_lane(5, 3.0);
        let g = build_conflict_graph(&lane, enumerate_candidate_paths(&lane), ConflictRule::Link);
        let ini = greedy_initial_set(&g);
        let res = local_search(&lane, &g, &ini, Sweeps::Single);
        assert!(res.utility >= res.initial_utility);
        let fixed = local_search(&lane, &g, &ini, Sweeps::FixedPoint);
        assert!(fixed.utility >= res.utility);
    }
}
