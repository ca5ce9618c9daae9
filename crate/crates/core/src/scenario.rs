//! Network generation: node placement, disk detection and noisy ranging.
//!
//! Agents carry indices `1..=N` and anchors `N+1..=N+M`. Everything here is a
//! pure function of the configuration and the seed.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::graph::ConnectivityGraph;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Zero-based dense index.
    pub fn idx(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_idx(idx: usize) -> Self {
        NodeId(idx as u32 + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ranging noise whose standard deviation grows linearly with distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma0: f64,
    pub k_sigma: f64,
}

impl NoiseModel {
    pub const NOISELESS: NoiseModel = NoiseModel { sigma0: 0.0, k_sigma: 0.0 };

    pub fn sigma(&self, d: f64) -> f64 {
        self.sigma0 + self.k_sigma * d
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma0 >= 0.0 && self.k_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise parameters must be non-negative, got sigma0={} k_sigma={}",
                self.sigma0, self.k_sigma
            )));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { sigma0: 0.2, k_sigma: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkPreset {
    Net1,
    Net2,
    Net3,
}

impl std::str::FromStr for NetworkPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "net1" => Ok(NetworkPreset::Net1),
            "net2" => Ok(NetworkPreset::Net2),
            "net3" => Ok(NetworkPreset::Net3),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

impl fmt::Display for NetworkPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkPreset::Net1 => "net1",
            NetworkPreset::Net2 => "net2",
            NetworkPreset::Net3 => "net3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnchorLayout {
    Preset(NetworkPreset),
    Explicit(Vec<Point>),
}

/// Distance metric of the deployment area. `Torus` wraps both axes and is
/// only meant for link-count validation free of boundary effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Square,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub area_side: f64,
    pub radio_range: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    pub anchors: AnchorLayout,
    pub agent_count: usize,
    #[serde(default)]
    pub topology: Topology,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return Err(Error::Config(format!("area side must be positive, got {}", self.area_side)));
        }
        if !(self.radio_range > 0.0 && self.radio_range.is_finite()) {
            return Err(Error::Config(format!(
                "radio range must be positive, got {}",
                self.radio_range
            )));
        }
        self.noise.validate()?;
        let anchors = anchor_layout(&self.anchors, self.area_side);
        if anchors.is_empty() {
            return Err(Error::Config("at least one anchor is required".into()));
        }
        let a = self.area_side;
        if let Some(p) = anchors.iter().find(|p| !(0.0..=a).contains(&p.x) || !(0.0..=a).contains(&p.y)) {
            return Err(Error::Config(format!("anchor ({}, {}) lies outside the area", p.x, p.y)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_side: f64,
    pub radio_range: f64,
    #[serde(default)]
    pub topology: Topology,
    pub noise: NoiseModel,
    pub anchors: Vec<Node>,
    /// True positions, hidden from inference.
    pub agents: Vec<Node>,
    pub seed: u64,
}

impl Scenario {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn node_count(&self) -> usize {
        self.agents.len() + self.anchors.len()
    }

    pub fn is_anchor(&self, id: NodeId) -> bool {
        id.idx() >= self.agents.len() && id.idx() < self.node_count()
    }

    pub fn is_agent(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.idx() < self.agents.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.idx() < self.node_count()
    }

    pub fn position(&self, id: NodeId) -> Option<Point> {
        if !self.contains(id) {
            None
        } else if id.idx() < self.agents.len() {
            Some(self.agents[id.idx()].position)
        } else {
            Some(self.anchors[id.idx() - self.agents.len()].position)
        }
    }

    /// Positions indexed by `NodeId::idx`.
    pub fn positions(&self) -> Vec<Point> {
        self.agents.iter().chain(&self.anchors).map(|n| n.position).collect()
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.agents.iter().map(|n| n.id)
    }

    pub fn anchor_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.anchors.iter().map(|n| n.id)
    }

    /// Distance under the scenario's topology.
    pub fn distance(&self, p: Point, q: Point) -> f64 {
        match self.topology {
            Topology::Square => p.dist(q),
            Topology::Torus => {
                let a = self.area_side;
                let wrap = |d: f64| {
                    let d = d.abs() % a;
                    d.min(a - d)
                };
                wrap(p.x - q.x).hypot(wrap(p.y - q.y))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.check_ids()?;
        Ok(sc)
    }

    /// Hex SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_ids(&self) -> Result<()> {
        let n = self.agents.len();
        for (k, node) in self.agents.iter().enumerate() {
            if node.id != NodeId::from_idx(k) {
                return Err(Error::Integrity(format!("agent slot {k} carries id {}", node.id)));
            }
        }
        for (k, node) in self.anchors.iter().enumerate() {
            if node.id != NodeId::from_idx(n + k) {
                return Err(Error::Integrity(format!("anchor slot {k} carries id {}", node.id)));
            }
        }
        Ok(())
    }
}

/// Disk detection model: two nodes hear each other iff within range (inclusive).
pub fn detect(x_v: Point, x_i: Point, range: f64) -> bool {
    x_v.dist(x_i) <= range
}

/// Anchor positions for a layout.
///
/// * `net3`: 3×3 grid with margin a/6.
/// * `net1`/`net2`: 12 points evenly spaced on a ring of radius 0.4a around
///   the area center (first at angle 0), followed by the center itself.
pub fn anchor_layout(layout: &AnchorLayout, area_side: f64) -> Vec<Point> {
    let a = area_side;
    match layout {
        AnchorLayout::Explicit(points) => points.clone(),
        AnchorLayout::Preset(NetworkPreset::Net3) => {
            let ticks = [a / 6.0, a / 2.0, 5.0 * a / 6.0];
            ticks
                .iter()
                .flat_map(|&y| ticks.iter().map(move |&x| Point::new(x, y)))
                .collect()
        }
        AnchorLayout::Preset(NetworkPreset::Net1 | NetworkPreset::Net2) => {
            let center = Point::new(a / 2.0, a / 2.0);
            let radius = 0.4 * a;
            let mut points: Vec<Point> = (0..12)
                .map(|k| {
                    let phi = std::f64::consts::TAU * k as f64 / 12.0;
                    center + Point::new(phi.cos(), phi.sin()) * radius
                })
                .collect();
            points.push(center);
            points
        }
    }
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let a = config.area_side;
    let mut rng = seed::derived_rng(seed, Stream::Placement, &[]);
    let agents: Vec<Node> = (0..config.agent_count)
        .map(|k| Node {
            id: NodeId::from_idx(k),
            position: Point::new(rng.random_range(0.0..=a), rng.random_range(0.0..=a)),
        })
        .collect();
    let anchors = anchor_layout(&config.anchors, a)
        .into_iter()
        .enumerate()
        .map(|(k, position)| Node { id: NodeId::from_idx(config.agent_count + k), position })
        .collect();
    Ok(Scenario {
        area_side: a,
        radio_range: config.radio_range,
        topology: config.topology,
        noise: config.noise,
        anchors,
        agents,
        seed,
    })
}

/// Unordered pair key with the smaller id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(NodeId, NodeId);

impl Edge {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn lo(self) -> NodeId {
        self.0
    }

    pub fn hi(self) -> NodeId {
        self.1
    }

    pub fn other(self, n: NodeId) -> NodeId {
        if n == self.0 {
            self.1
        } else {
            self.0
        }
    }
}

/// One symmetric range measurement per edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSet {
    entries: BTreeMap<Edge, f64>,
}

impl MeasurementSet {
    pub fn from_entries(entries: impl IntoIterator<Item = (Edge, f64)>) -> Self {
        MeasurementSet { entries: entries.into_iter().collect() }
    }

    pub fn get(&self, v: NodeId, i: NodeId) -> Option<f64> {
        self.entries.get(&Edge::new(v, i)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, f64)> + '_ {
        self.entries.iter().map(|(e, d)| (*e, *d))
    }
}

/// Draws d̃ = d + n, n ~ N(0, σ(d)²), once per unordered edge. Non-positive
/// draws are redrawn.
pub fn measure_distances(
    scenario: &Scenario,
    graph: &ConnectivityGraph,
    seed: u64,
) -> Result<MeasurementSet> {
    let mut entries = BTreeMap::new();
    for edge in graph.edges() {
        let (p, q) = match (scenario.position(edge.lo()), scenario.position(edge.hi())) {
            (Some(p), Some(q)) => (p, q),
            _ => {
                return Err(Error::Integrity(format!(
                    "edge ({}, {}) references a node outside the scenario",
                    edge.lo(),
                    edge.hi()
                )))
            }
        };
        let d = scenario.distance(p, q);
        let sigma = scenario.noise.sigma(d);
        let mut rng =
            seed::derived_rng(seed, Stream::Measurement, &[edge.lo().0 as u64, edge.hi().0 as u64]);
        let measured = draw_positive(d, sigma, &mut rng);
        entries.insert(edge, measured);
    }
    Ok(MeasurementSet { entries })
}

fn draw_positive(d: f64, sigma: f64, rng: &mut seed::Rng) -> f64 {
    if sigma == 0.0 {
        // d == 0 means coincident nodes; keep the pair usable
        return if d > 0.0 { d } else { f64::MIN_POSITIVE };
    }
    loop {
        let n: f64 = StandardNormal.sample(rng);
        let v = d + sigma * n;
        if v > 0.0 {
            return v;
        }
    }
}
