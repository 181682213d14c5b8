//! Graph construction and edge-list I/O.
//!
//! Node ids are dense integers `0..n`. The protocols themselves never look at
//! ids (nodes are anonymous); ids exist for simulator bookkeeping and traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node count must be positive")]
    EmptyGraph,
    #[error("self-loop at node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u32, u32),
    #[error("edge endpoint {endpoint} out of range for {node_count} nodes")]
    EndpointOutOfRange { endpoint: u32, node_count: u32 },
    #[error("matching lower-bound graph needs n to be a positive multiple of 4, got {0}")]
    InvalidMatchingSize(u32),
    #[error("edge probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Undirected communication graph over nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct Graph {
    node_count: u32,
    edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
}

/// Wire form of a graph: `{node_count, edges}` with normalized `u < v` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub node_count: u32,
    pub edges: Vec<(u32, u32)>,
}

impl From<Graph> for GraphDoc {
    fn from(g: Graph) -> Self {
        GraphDoc {
            node_count: g.node_count,
            edges: g.edges,
        }
    }
}

impl TryFrom<GraphDoc> for Graph {
    type Error = TopologyError;
    fn try_from(doc: GraphDoc) -> Result<Self, TopologyError> {
        Graph::new(doc.node_count, doc.edges)
    }
}

impl Graph {
    /// Build a graph, normalizing edges to `u < v` order and rejecting
    /// self-loops, duplicates, and out-of-range endpoints.
    pub fn new(node_count: u32, edges: Vec<(u32, u32)>) -> Result<Self, TopologyError> {
        if node_count == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let mut normalized: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            for endpoint in [a, b] {
                if endpoint >= node_count {
                    return Err(TopologyError::EndpointOutOfRange {
                        endpoint,
                        node_count,
                    });
                }
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(TopologyError::DuplicateEdge(w[0].0, w[0].1));
        }
        let mut adjacency = vec![Vec::new(); node_count as usize];
        for &(u, v) in &normalized {
            adjacency[u as usize].push(v);
            adjacency[v as usize].push(u);
        }
        Ok(Graph {
            node_count,
            edges: normalized,
            adjacency,
        })
    }

    pub fn node_count(&self) -> u32 {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in normalized `(u, v)` order with `u < v`.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, node: u32) -> &[u32] {
        &self.adjacency[node as usize]
    }

    pub fn degree(&self, node: u32) -> u32 {
        self.adjacency[node as usize].len() as u32
    }

    /// Maximum degree over all nodes; 0 for edgeless graphs.
    pub fn max_degree(&self) -> u32 {
        self.adjacency
            .iter()
            .map(|a| a.len() as u32)
            .max()
            .unwrap_or(0)
    }
}

/// The lower-bound instance: a union of `n/4` disjoint edges `{2i, 2i+1}`
/// and `n/2` isolated nodes `n/2..n`.
pub fn generate_matching_lower_bound(n: u32) -> Result<Graph, TopologyError> {
    if n < 4 || !n.is_multiple_of(4) {
        return Err(TopologyError::InvalidMatchingSize(n));
    }
    let edges = (0..n / 4).map(|i| (2 * i, 2 * i + 1)).collect();
    Graph::new(n, edges)
}

/// Erdős–Rényi G(n, p): each unordered pair is an edge independently with
/// probability `p`. Deterministic for a fixed seed. Uses geometric skipping
/// so generation is O(n + m) rather than O(n^2).
pub fn generate_gnp(n: u32, p: f64, seed: u64) -> Result<Graph, TopologyError> {
    if n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(TopologyError::InvalidProbability(p));
    }
    if p == 0.0 {
        return Graph::new(n, Vec::new());
    }
    let mut edges = Vec::new();
    if p == 1.0 {
        for v in 1..n {
            for u in 0..v {
                edges.push((u, v));
            }
        }
        return Graph::new(n, edges);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_q = (1.0 - p).ln();
    let (mut v, mut w) = (1i64, -1i64);
    let n = i64::from(n);
    while v < n {
        let r: f64 = rng.random();
        // skip length is 1 + floor(ln(1-r)/ln(1-p))
        w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
        while w >= v && v < n {
            w -= v;
            v += 1;
        }
        if v < n {
            edges.push((w as u32, v as u32));
        }
    }
    Graph::new(n as u32, edges)
}

/// Star with node 0 at the center and `n - 1` leaves.
pub fn generate_star(n: u32) -> Result<Graph, TopologyError> {
    if n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    Graph::new(n, (1..n).map(|v| (0, v)).collect())
}

/// Complete graph on `n` nodes.
pub fn generate_clique(n: u32) -> Result<Graph, TopologyError> {
    generate_gnp(n, 1.0, 0)
}

/// Simple path 0 - 1 - ... - (n-1).
pub fn generate_path(n: u32) -> Result<Graph, TopologyError> {
    if n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    Graph::new(n, (1..n).map(|v| (v - 1, v)).collect())
}

/// Parse the edge-list text format: first line `n m`, then `m` lines `u v`
/// with `u < v`, 0-indexed, whitespace-separated.
pub fn load_edge_list(text: &str) -> Result<Graph, TopologyError> {
    let parse_err = |line: usize, message: String| TopologyError::Parse { line, message };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let mut parts = header.split_whitespace();
    let n: u32 = parts
        .next()
        .ok_or_else(|| parse_err(1, "missing node count".into()))?
        .parse()
        .map_err(|e| parse_err(1, format!("bad node count: {e}")))?;
    let m: usize = parts
        .next()
        .ok_or_else(|| parse_err(1, "missing edge count".into()))?
        .parse()
        .map_err(|e| parse_err(1, format!("bad edge count: {e}")))?;
    if parts.next().is_some() {
        return Err(parse_err(1, "trailing tokens after header".into()));
    }

    let mut edges = Vec::with_capacity(m);
    let mut seen = std::collections::HashSet::with_capacity(m);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let u: u32 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad endpoint: {e}")))?;
        let v: u32 = parts
            .next()
            .ok_or_else(|| parse_err(line_no, "missing second endpoint".into()))?
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad endpoint: {e}")))?;
        if parts.next().is_some() {
            return Err(parse_err(line_no, "trailing tokens after edge".into()));
        }
        if u == v {
            return Err(parse_err(line_no, format!("self-loop at node {u}")));
        }
        if u > v {
            return Err(parse_err(
                line_no,
                format!("endpoints not in u < v order: {u} {v}"),
            ));
        }
        if v >= n {
            return Err(parse_err(
                line_no,
                format!("endpoint {v} out of range for {n} nodes"),
            ));
        }
        if !seen.insert((u, v)) {
            return Err(parse_err(line_no, format!("duplicate edge ({u}, {v})")));
        }
        edges.push((u, v));
    }
    if edges.len() != m {
        return Err(parse_err(
            1,
            format!("header declares {m} edges but {} were given", edges.len()),
        ));
    }
    Graph::new(n, edges)
}

/// Serialize a graph in the edge-list text format; `load_edge_list` inverts it.
pub fn save_edge_list(g: &Graph) -> String {
    let mut out = String::with_capacity(16 + 12 * g.edge_count());
    out.push_str(&format!("{} {}\n", g.node_count(), g.edge_count()));
    for &(u, v) in g.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    out
}
