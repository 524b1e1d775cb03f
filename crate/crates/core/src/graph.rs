//! Undirected, connected communication graphs.
//!
//! Nodes are stored 0-based internally. Every textual form (edge lists,
//! traces, CSV) uses 1-based labels, so node `0` prints as `1`.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resampling budget for Erdős–Rényi graphs that come out disconnected.
pub const ER_MAX_RETRIES: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("invalid node count {n} for {family}: {reason}")]
    InvalidSize {
        family: &'static str,
        n: usize,
        reason: &'static str,
    },
    #[error("edge probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("no connected Erdős–Rényi sample after {0} attempts")]
    Disconnected(usize),
    #[error("graph is not connected")]
    NotConnected,
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),
    #[error("edge list parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// An undirected edge `{i, j}` with `i < j` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
}

impl Edge {
    /// Builds the canonical (ordered) edge. Panics on a self-loop.
    pub fn new(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "self-loop {a}");
        if a < b {
            Edge { i: a, j: b }
        } else {
            Edge { i: b, j: a }
        }
    }

    /// 1-based `(i, j)` labels.
    pub fn labels(&self) -> (usize, usize) {
        (self.i + 1, self.j + 1)
    }

    pub fn contains(&self, v: usize) -> bool {
        self.i == v || self.j == v
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.i + 1, self.j + 1)
    }
}

/// Graph families used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Complete,
    Line,
    Star,
    /// Two complete blocks joined by a line, `n / 3` nodes each.
    Barbell,
    /// Two rails of `n / 2` nodes joined by rungs.
    Ladder,
    ErdosRenyi { p: f64 },
}

impl GraphKind {
    pub fn name(&self) -> &'static str {
        match self {
            GraphKind::Complete => "complete",
            GraphKind::Line => "line",
            GraphKind::Star => "star",
            GraphKind::Barbell => "barbell",
            GraphKind::Ladder => "ladder",
            GraphKind::ErdosRenyi { .. } => "erdos_renyi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<usize>>,
    diameter: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary edge collection. Duplicate edges are
    /// merged; self-loops, out-of-range nodes and disconnected inputs are
    /// rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        let mut list = Vec::new();
        for (a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(GraphError::InvalidEdge(a, b));
            }
            list.push(Edge::new(a, b));
        }
        list.sort_unstable();
        list.dedup();

        let mut neighbors = vec![Vec::new(); n];
        for e in &list {
            neighbors[e.i].push(e.j);
            neighbors[e.j].push(e.i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }

        let mut diameter = 0;
        for s in 0..n {
            for d in bfs(&neighbors, s) {
                diameter = diameter.max(d.ok_or(GraphError::NotConnected)?);
            }
        }

        Ok(Graph {
            n,
            edges: list,
            neighbors,
            diameter,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges in ascending lexicographic order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && a < self.n && self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Sum of all degrees, i.e. twice the edge count.
    pub fn total_degree(&self) -> usize {
        2 * self.edges.len()
    }

    /// Hop distances from `source`.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        bfs(&self.neighbors, source)
            .into_iter()
            .map(|d| d.expect("graph is connected"))
            .collect()
    }

    /// Edge-list text: `n` on the first line, then `i j` per edge (1-based,
    /// ascending).
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for e in &self.edges {
            out.push_str(&format!("{} {}\n", e.i + 1, e.j + 1));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            reason: "missing node count".into(),
        })?;
        let n: usize = header.trim().parse().map_err(|_| GraphError::Parse {
            line: 1,
            reason: format!("bad node count {header:?}"),
        })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let parse_err = || GraphError::Parse {
                line: idx + 1,
                reason: format!("expected `i j`, got {line:?}"),
            };
            let mut parts = line.split_whitespace();
            let a: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(parse_err)?;
            let b: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(parse_err)?;
            if parts.next().is_some() || a == 0 || b == 0 {
                return Err(parse_err());
            }
            edges.push((a - 1, b - 1));
        }
        Graph::from_edges(n, edges)
    }
}

fn bfs(neighbors: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; neighbors.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &neighbors[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Builds a connected graph of the given family.
///
/// `seed` is only consulted for Erdős–Rényi graphs (absent means 0). Those are
/// resampled until connected, up to [`ER_MAX_RETRIES`] attempts.
pub fn make_graph(kind: GraphKind, n: usize, seed: Option<u64>) -> Result<Graph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    match kind {
        GraphKind::Complete => {
            let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            Graph::from_edges(n, edges)
        }
        GraphKind::Line => Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))),
        GraphKind::Star => Graph::from_edges(n, (1..n).map(|j| (0, j))),
        GraphKind::Barbell => {
            if !n.is_multiple_of(3) {
                return Err(GraphError::InvalidSize {
                    family: "barbell",
                    n,
                    reason: "n must be divisible by 3",
                });
            }
            let m = n / 3;
            let mut edges = Vec::new();
            // blocks [0, m) and [2m, 3m), line [m, 2m)
            for base in [0, 2 * m] {
                for i in base..base + m {
                    for j in i + 1..base + m {
                        edges.push((i, j));
                    }
                }
            }
            for i in m - 1..2 * m {
                edges.push((i, i + 1));
            }
            Graph::from_edges(n, edges)
        }
        GraphKind::Ladder => {
            if !n.is_multiple_of(2) {
                return Err(GraphError::InvalidSize {
                    family: "ladder",
                    n,
                    reason: "n must be even",
                });
            }
            let m = n / 2;
            let mut edges = Vec::new();
            for i in 0..m {
                edges.push((i, i + m));
                if i + 1 < m {
                    edges.push((i, i + 1));
                    edges.push((i + m, i + m + 1));
                }
            }
            Graph::from_edges(n, edges)
        }
        GraphKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GraphError::InvalidProbability(p));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            for _ in 0..ER_MAX_RETRIES {
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                match Graph::from_edges(n, edges) {
                    Ok(g) => return Ok(g),
                    Err(GraphError::NotConnected) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(GraphError::Disconnected(ER_MAX_RETRIES))
        }
    }
}
