use serde::{Deserialize, Serialize};

use super::paths::{Lane, RelayPath};

/// When two same-direction candidate paths may not both be selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConflictRule {
    /// They use a common directed link.
    #[default]
    Link,
    /// They visit a common cell.
    Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphRepr", from = "GraphRepr")]
pub struct ConflictGraph {
    pub vertices: Vec<RelayPath>,
    pub edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    vertices: Vec<RelayPath>,
    edges: Vec<(usize, usize)>,
}

impl From<ConflictGraph> for GraphRepr {
    fn from(g: ConflictGraph) -> Self {
        Self { vertices: g.vertices, edges: g.edges }
    }
}

impl From<GraphRepr> for ConflictGraph {
    fn from(r: GraphRepr) -> Self {
        ConflictGraph::from_edges(r.vertices, r.edges)
    }
}

impl ConflictGraph {
    /// A graph with an explicit edge list. Out-of-range edges are dropped.
    pub fn from_edges(vertices: Vec<RelayPath>, edges: Vec<(usize, usize)>) -> Self {
        let n = vertices.len();
        let edges: Vec<(usize, usize)> = edges.into_iter().filter(|&(a, b)| a < n && b < n && a != b).collect();
        let mut adjacency = vec![vec![false; n]; n];
        for &(a, b) in &edges {
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        Self { vertices, edges, adjacency }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    /// `v` conflicts with none of `set`.
    pub fn compatible(&self, v: usize, set: &[usize]) -> bool {
        set.iter().all(|&u| u != v && !self.adjacency[v][u])
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(i, &a)| set[i + 1..].iter().all(|&b| a != b && !self.adjacency[a][b]))
    }
}

pub fn build_conflict_graph(lane: &Lane, paths: Vec<RelayPath>, rule: ConflictRule) -> ConflictGraph {
    let spans: Vec<(usize, usize)> = paths.iter().map(|p| lane.span(p)).collect();
    let n = paths.len();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (s1, e1) = spans[a];
            let (s2, e2) = spans[b];
            let hit = match rule {
                ConflictRule::Link => s1.max(s2) < e1.min(e2),
                ConflictRule::Node => s1.max(s2) <= e1.min(e2),
            };
            if hit {
                edges.push((a, b));
            }
        }
    }
    ConflictGraph::from_edges(paths, edges)
}
