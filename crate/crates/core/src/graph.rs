//! Disk-model connectivity and the spanning structures used by the
//! tree-restricted baselines.
//!
//! Neighbor lists are kept sorted by ascending `NodeId`; BFS expansion order
//! and MST tie-breaking both follow that order, so trees are reproducible.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::scenario::{Edge, MeasurementSet, NodeId, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityGraph {
    node_count: usize,
    edges: BTreeSet<Edge>,
    neighbors: Vec<Vec<NodeId>>,
}

impl ConnectivityGraph {
    /// Builds a graph over nodes `1..=node_count` from an explicit edge list.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Integrity(format!("self-loop on node {a}")));
            }
            for n in [a, b] {
                if n.0 == 0 || n.idx() >= node_count {
                    return Err(Error::UnknownNode(n));
                }
            }
            set.insert(Edge::new(a, b));
        }
        Ok(Self::from_edge_set(node_count, set))
    }

    fn from_edge_set(node_count: usize, edges: BTreeSet<Edge>) -> Self {
        let mut neighbors = vec![Vec::new(); node_count];
        for e in &edges {
            neighbors[e.lo().idx()].push(e.hi());
            neighbors[e.hi().idx()].push(e.lo());
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        ConnectivityGraph { node_count, edges, neighbors }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count).map(NodeId::from_idx)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_set(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    /// Neighbor set S_i, ascending.
    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.neighbors[n.idx()]
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.neighbors[n.idx()].len()
    }

    /// Same node set, keeping only the given edges (which must exist here).
    pub fn restrict(&self, edges: &BTreeSet<Edge>) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| !self.edges.contains(e)) {
            return Err(Error::Integrity(format!(
                "edge ({}, {}) is not in the parent graph",
                e.lo(),
                e.hi()
            )));
        }
        Ok(Self::from_edge_set(self.node_count, edges.clone()))
    }

    /// Edge list as CSV: node_a, node_b, true_distance, measured_distance.
    pub fn write_edges_csv<W: Write>(
        &self,
        scenario: &Scenario,
        measurements: &MeasurementSet,
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "node_a,node_b,true_distance,measured_distance")?;
        for e in &self.edges {
            let p = scenario.position(e.lo()).ok_or(Error::UnknownNode(e.lo()))?;
            let q = scenario.position(e.hi()).ok_or(Error::UnknownNode(e.hi()))?;
            let measured = measurements.get(e.lo(), e.hi()).map(sig9).unwrap_or_default();
            writeln!(out, "{},{},{},{}", e.lo(), e.hi(), sig9(scenario.distance(p, q)), measured)?;
        }
        Ok(())
    }
}

/// Edge present iff the two nodes are within radio range (inclusive).
pub fn build_connectivity(scenario: &Scenario) -> ConnectivityGraph {
    let positions = scenario.positions();
    let range = scenario.radio_range;
    let mut edges = BTreeSet::new();
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            if scenario.distance(positions[a], positions[b]) <= range {
                edges.insert(Edge::new(NodeId::from_idx(a), NodeId::from_idx(b)));
            }
        }
    }
    ConnectivityGraph::from_edge_set(positions.len(), edges)
}

/// A spanning forest of a connectivity graph.
///
/// For BFS trees, the root set is treated as one contracted source: each
/// reached non-root node contributes exactly its parent edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGraph {
    pub retained_edges: BTreeSet<Edge>,
    pub root_set: BTreeSet<NodeId>,
    /// Hop distance from the root set (BFS trees only).
    pub depth: BTreeMap<NodeId, usize>,
    /// Nodes the tree could not reach.
    pub unreachable: Vec<NodeId>,
}

impl TreeGraph {
    pub fn edge_count(&self) -> usize {
        self.retained_edges.len()
    }
}

/// Multi-source breadth-first forest rooted at `roots`.
pub fn bfs_spanning_tree(graph: &ConnectivityGraph, roots: &BTreeSet<NodeId>) -> Result<TreeGraph> {
    if roots.is_empty() {
        return Err(Error::Config("BFS tree needs a non-empty root set".into()));
    }
    if let Some(r) = roots.iter().find(|r| r.0 == 0 || r.idx() >= graph.node_count()) {
        return Err(Error::UnknownNode(*r));
    }
    let mut depth: BTreeMap<NodeId, usize> = roots.iter().map(|&r| (r, 0)).collect();
    let mut queue: VecDeque<NodeId> = roots.iter().copied().collect();
    let mut retained = BTreeSet::new();
    while let Some(u) = queue.pop_front() {
        let du = depth[&u];
        for &v in graph.neighbors(u) {
            if !depth.contains_key(&v) {
                depth.insert(v, du + 1);
                retained.insert(Edge::new(u, v));
                queue.push_back(v);
            }
        }
    }
    let unreachable = graph.nodes().filter(|n| !depth.contains_key(n)).collect();
    Ok(TreeGraph { retained_edges: retained, root_set: roots.clone(), depth, unreachable })
}

/// Kruskal minimum spanning forest. Equal weights are ordered by the edge key
/// (smaller id, larger id).
pub fn min_spanning_tree(
    graph: &ConnectivityGraph,
    weight: impl Fn(Edge) -> Option<f64>,
) -> Result<TreeGraph> {
    let mut weighted = Vec::with_capacity(graph.edge_count());
    for e in graph.edges() {
        let w = weight(e).ok_or_else(|| {
            Error::Integrity(format!("no weight for edge ({}, {})", e.lo(), e.hi()))
        })?;
        weighted.push((w, e));
    }
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut uf = UnionFind::new(graph.node_count());
    let mut retained = BTreeSet::new();
    for (_, e) in weighted {
        if uf.union(e.lo().idx(), e.hi().idx()) {
            retained.insert(e);
        }
    }
    Ok(TreeGraph {
        retained_edges: retained,
        root_set: BTreeSet::new(),
        depth: BTreeMap::new(),
        unreachable: Vec::new(),
    })
}

/// MST weighted by measured distances.
pub fn measured_min_spanning_tree(graph: &ConnectivityGraph, measurements: &MeasurementSet) -> Result<TreeGraph> {
    min_spanning_tree(graph, |e| measurements.get(e.lo(), e.hi()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkMode {
    Undirected,
    DirectedMessages,
}

pub fn count_links(edges: &BTreeSet<Edge>, mode: LinkMode) -> usize {
    match mode {
        LinkMode::Undirected => edges.len(),
        LinkMode::DirectedMessages => 2 * edges.len(),
    }
}

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}
