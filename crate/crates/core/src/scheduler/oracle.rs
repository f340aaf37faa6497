use serde::{Deserialize, Serialize};

use super::conflict::ConflictGraph;
use super::paths::Lane;
use super::search::fill_gaps;
use crate::error::{Error, Result};

/// Largest candidate set the exhaustive search accepts per lane.
pub const ORACLE_VERTEX_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub selected: Vec<usize>,
    pub full: Vec<usize>,
    pub utility: f64,
    /// Number of independent sets examined.
    pub sets_examined: u64,
}

/// Best gap-filled utility over every independent set of the graph.
pub fn exhaustive_oracle(lane: &Lane, graph: &ConflictGraph) -> Result<OracleSolution> {
    if graph.len() > ORACLE_VERTEX_LIMIT {
        return Err(Error::Size { vertices: graph.len(), limit: ORACLE_VERTEX_LIMIT });
    }
    let (full, utility) = fill_gaps(lane, graph, &[]);
    let mut best = OracleSolution { selected: Vec::new(), full, utility, sets_examined: 1 };
    let mut current = Vec::new();
    extend(lane, graph, 0, &mut current, &mut best);
    Ok(best)
}

fn extend(lane: &Lane, graph: &ConflictGraph, from: usize, current: &mut Vec<usize>, best: &mut OracleSolution) {
    for v in from..graph.len() {
        if !graph.compatible(v, current) {
            continue;
        }
        current.push(v);
        let (full, u) = fill_gaps(lane, graph, current);
        best.sets_examined += 1;
        if u > best.utility {
            best.utility = u;
            best.selected = current.clone();
            best.full = full;
        }
        extend(lane, graph, v + 1, current, best);
        current.pop();
    }
}
