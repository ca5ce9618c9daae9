//! Layered localization.
//!
//! Agents are activated layer by layer by bootstrap percolation from the
//! anchor set. An agent's confidence is the number of already-active
//! neighbors it can reference, capped at 3. Each layer then runs NBP
//! against its references only. A layer whose members all had three upper
//! references listens to upper layers alone; any other layer also exchanges
//! messages among its own members. Messages never travel from a lower layer
//! to an upper one.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ConnectivityGraph;
use crate::nbp::{Engine, NbpOutput, Phase, RunConfig};
use crate::particles::ParticleBelief;
use crate::scenario::{MeasurementSet, NodeId, Scenario};
use crate::traffic::{MessageKind, TrafficLog};

/// Coarse confidence from the number of active references: 0, 1, 2 or 3 (= three or more).
pub fn confidence(n_refs: usize) -> u8 {
    n_refs.min(3) as u8
}

/// How the initial connection-degree threshold gates activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Layer 1 admits every agent whose confidence reaches the threshold
    /// (lowered to the best available confidence if nobody reaches it).
    /// Later layers activate the highest-confidence non-empty bucket.
    #[default]
    Adaptive,
    /// Every layer admits exactly the agents at or above the threshold;
    /// agents that never reach it stay unassigned.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRefs {
    /// F_i^l: active neighbors from upper layers (anchors included).
    pub upper: Vec<NodeId>,
    /// Neighbors activated in the same layer.
    pub same_layer: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    /// 1-based; anchors form layer 0.
    pub index: u32,
    /// Minimum confidence admitted into this layer; 0 marks the unlayered
    /// single-layer mode where every neighbor is a reference.
    pub threshold: u8,
    pub members: BTreeMap<NodeId, MemberRefs>,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAssignment {
    pub threshold_init: u8,
    pub mode: GateMode,
    pub anchors: Vec<NodeId>,
    pub layers: Vec<Layer>,
    pub unassignable: Vec<NodeId>,
}

impl LayerAssignment {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Layer index of a node: 0 for anchors, `None` for unassignable agents.
    pub fn layer_of(&self, id: NodeId) -> Option<u32> {
        if self.anchors.binary_search(&id).is_ok() {
            return Some(0);
        }
        self.layers.iter().find(|l| l.members.contains_key(&id)).map(|l| l.index)
    }

    /// R^l: anchors together with all layers above `l`.
    pub fn reference_set(&self, l: u32) -> BTreeSet<NodeId> {
        let mut set: BTreeSet<NodeId> = self.anchors.iter().copied().collect();
        for layer in self.layers.iter().filter(|layer| layer.index < l) {
            set.extend(layer.members.keys().copied());
        }
        set
    }

    pub fn layer(&self, l: u32) -> Option<&Layer> {
        l.checked_sub(1).and_then(|k| self.layers.get(k as usize))
    }

    /// `{"threshold_init":..,"mode":..,"layers":{"1":[..],..},"thresholds":{..},"unassignable":[..]}`
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            threshold_init: u8,
            mode: GateMode,
            anchors: &'a [NodeId],
            layers: BTreeMap<u32, Vec<NodeId>>,
            thresholds: BTreeMap<u32, u8>,
            unassignable: &'a [NodeId],
        }
        let export = Export {
            threshold_init: self.threshold_init,
            mode: self.mode,
            anchors: &self.anchors,
            layers: self.layers.iter().map(|l| (l.index, l.members.keys().copied().collect())).collect(),
            thresholds: self.layers.iter().map(|l| (l.index, l.threshold)).collect(),
            unassignable: &self.unassignable,
        };
        Ok(serde_json::to_string_pretty(&export)?)
    }
}

/// Bootstrap-percolation layering.
///
/// `threshold_init = 0` puts every connected agent into one layer whose
/// references are all neighbors, which is plain NBP.
pub fn assign_layers(
    graph: &ConnectivityGraph,
    anchors: &BTreeSet<NodeId>,
    threshold_init: u8,
    mode: GateMode,
) -> Result<LayerAssignment> {
    if anchors.is_empty() {
        return Err(Error::Config("layering needs at least one anchor".into()));
    }
    if threshold_init > 3 {
        return Err(Error::Config(format!("threshold must be in 0..=3, got {threshold_init}")));
    }
    if let Some(a) = anchors.iter().find(|a| a.0 == 0 || a.idx() >= graph.node_count()) {
        return Err(Error::UnknownNode(*a));
    }
    let agents: Vec<NodeId> = graph.nodes().filter(|n| !anchors.contains(n)).collect();
    let mut assignment = LayerAssignment {
        threshold_init,
        mode,
        anchors: anchors.iter().copied().collect(),
        layers: Vec::new(),
        unassignable: Vec::new(),
    };

    if threshold_init == 0 {
        let mut members = BTreeMap::new();
        for &i in &agents {
            let nb = graph.neighbors(i);
            if nb.is_empty() {
                assignment.unassignable.push(i);
                continue;
            }
            let (upper, same_layer) = nb.iter().partition(|n| anchors.contains(n));
            members.insert(i, MemberRefs { upper, same_layer });
        }
        if !members.is_empty() {
            assignment.layers.push(Layer { index: 1, threshold: 0, members });
        }
        return Ok(assignment);
    }

    let mut reference: BTreeSet<NodeId> = anchors.clone();
    let mut remaining: BTreeSet<NodeId> = agents.into_iter().collect();
    let mut index = 1u32;
    loop {
        let upper: BTreeMap<NodeId, Vec<NodeId>> = remaining
            .iter()
            .map(|&i| (i, graph.neighbors(i).iter().copied().filter(|n| reference.contains(n)).collect()))
            .collect();
        let best = upper.values().map(|f: &Vec<NodeId>| confidence(f.len())).max().unwrap_or(0);
        if best == 0 {
            break;
        }
        let gate = match mode {
            GateMode::Strict => threshold_init,
            GateMode::Adaptive if index == 1 => threshold_init.min(best),
            GateMode::Adaptive => best,
        };
        if best < gate {
            break;
        }
        let chosen: BTreeSet<NodeId> =
            upper.iter().filter(|(_, f)| confidence(f.len()) >= gate).map(|(i, _)| *i).collect();
        let members = chosen
            .iter()
            .map(|&i| {
                let same_layer = graph.neighbors(i).iter().copied().filter(|n| chosen.contains(n)).collect();
                (i, MemberRefs { upper: upper[&i].clone(), same_layer })
            })
            .collect();
        assignment.layers.push(Layer { index, threshold: gate, members });
        reference.extend(chosen.iter().copied());
        remaining.retain(|i| !chosen.contains(i));
        index += 1;
    }
    assignment.unassignable = remaining.into_iter().collect();
    Ok(assignment)
}

/// Reference set F_i of an agent in layer `l`: its upper-layer references,
/// extended by same-layer neighbors unless the layer was admitted at
/// confidence 3.
pub fn candidate_refs(i: NodeId, l: u32, assignment: &LayerAssignment) -> Result<Vec<NodeId>> {
    let layer = assignment
        .layer(l)
        .ok_or_else(|| Error::Integrity(format!("layer {l} does not exist")))?;
    let refs = layer
        .members
        .get(&i)
        .ok_or_else(|| Error::Integrity(format!("node {i} is not in layer {l}")))?;
    if layer.threshold == 3 {
        return Ok(refs.upper.clone());
    }
    let mut all: Vec<NodeId> = refs.upper.iter().chain(&refs.same_layer).copied().collect();
    all.sort_unstable();
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub index: u32,
    pub size: usize,
    pub threshold: u8,
    pub iterations: u32,
    pub upper_messages: usize,
    pub same_layer_messages: usize,
    pub degenerate_fusions: usize,
    pub elapsed: Duration,
    /// Combined fingerprint of the layer's beliefs when it froze.
    pub frozen_fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct HierarchicalOutput {
    pub beliefs: Vec<ParticleBelief>,
    pub log: TrafficLog,
    pub layers: Vec<LayerStats>,
    pub unassignable: Vec<NodeId>,
}

impl HierarchicalOutput {
    pub fn into_nbp_output(self) -> NbpOutput {
        let stats = crate::nbp::PhaseStats {
            iterations: self.layers.iter().map(|l| l.iterations).sum(),
            messages: self.log.len(),
            degenerate_fusions: self.layers.iter().map(|l| l.degenerate_fusions).sum(),
            elapsed: self.layers.iter().map(|l| l.elapsed).sum(),
        };
        NbpOutput { beliefs: self.beliefs, log: self.log, unlocalized: self.unassignable, stats }
    }
}

pub fn layer_fingerprint(beliefs: &[ParticleBelief], layer: &Layer) -> u64 {
    layer
        .members
        .keys()
        .fold(0xcbf2_9ce4_8422_2325u64, |acc, i| (acc ^ beliefs[i.idx()].fingerprint()).wrapping_mul(0x100_0000_01b3))
}

/// Runs layers strictly in order; each layer's beliefs freeze once its T
/// iterations are done and it becomes a reference for everything below.
pub fn run_hierarchical_nbp(
    scenario: &Scenario,
    graph: &ConnectivityGraph,
    measurements: &MeasurementSet,
    assignment: &LayerAssignment,
    cfg: &RunConfig,
) -> Result<HierarchicalOutput> {
    cfg.validate()?;
    if graph.node_count() != scenario.node_count() {
        return Err(Error::Integrity("graph and scenario disagree on node count".into()));
    }
    let expected_anchors: Vec<NodeId> = scenario.anchor_ids().collect();
    if assignment.anchors != expected_anchors {
        return Err(Error::Integrity("layer assignment was built for a different anchor set".into()));
    }
    let mut layer_of = vec![0u32; scenario.node_count()];
    for layer in &assignment.layers {
        for i in layer.members.keys() {
            if !scenario.is_agent(*i) {
                return Err(Error::Integrity(format!("layer {} lists non-agent {i}", layer.index)));
            }
            layer_of[i.idx()] = layer.index;
        }
    }

    let engine = Engine { scenario, measurements, cfg, layer_of: &layer_of };
    let mut beliefs = engine.initial_beliefs()?;
    let mut log = TrafficLog::new();
    let mut stats = Vec::with_capacity(assignment.layers.len());
    let mut base = 0u32;
    for layer in &assignment.layers {
        let receivers: Vec<NodeId> = layer.members.keys().copied().collect();
        let refs = receivers
            .iter()
            .map(|&i| candidate_refs(i, layer.index, assignment))
            .collect::<Result<Vec<_>>>()?;
        let phase = Phase { receivers, refs };
        let before = log.len();
        let ps = engine.run_phase(&phase, &mut beliefs, &mut log, base)?;
        base += ps.iterations;
        let same = log.records()[before..].iter().filter(|r| r.kind == MessageKind::SameLayer).count();
        stats.push(LayerStats {
            index: layer.index,
            size: layer.len(),
            threshold: layer.threshold,
            iterations: ps.iterations,
            upper_messages: ps.messages - same,
            same_layer_messages: same,
            degenerate_fusions: ps.degenerate_fusions,
            elapsed: ps.elapsed,
            frozen_fingerprint: layer_fingerprint(&beliefs, layer),
        });
    }
    Ok(HierarchicalOutput { beliefs, log, layers: stats, unassignable: assignment.unassignable.clone() })
}

/// A message that breaks the propagation rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleViolation {
    pub iteration: u32,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub reason: &'static str,
}

/// Checks every logged message against the layering: upper-to-lower always
/// allowed, same-layer only inside layers admitted below confidence 3,
/// never lower-to-upper.
pub fn audit_propagation(log: &TrafficLog, assignment: &LayerAssignment) -> Vec<RuleViolation> {
    let mut out = Vec::new();
    for r in log.records() {
        let violation = |reason| RuleViolation { iteration: r.iteration, sender: r.sender, receiver: r.receiver, reason };
        let (Some(sl), Some(rl)) = (assignment.layer_of(r.sender), assignment.layer_of(r.receiver)) else {
            out.push(violation("node outside the layering"));
            continue;
        };
        if sl != r.sender_layer || rl != r.receiver_layer {
            out.push(violation("logged layer disagrees with assignment"));
        } else if sl > rl {
            out.push(violation("message from a lower layer"));
        } else if sl == rl {
            let layer = assignment.layer(rl).expect("receiver layer exists");
            if layer.threshold > 2 {
                out.push(violation("same-layer message inside a confidence-3 layer"));
            }
            if r.kind != MessageKind::SameLayer {
                out.push(violation("same-layer message logged as upper"));
            }
        } else if r.kind != MessageKind::Upper {
            out.push(violation("upper-layer message logged as same-layer"));
        }
    }
    out
}

/// `layer,size,threshold,iterations,upper_messages,same_layer_messages`
pub fn write_layer_stats_csv<W: Write>(stats: &[LayerStats], mut out: W) -> Result<()> {
    writeln!(out, "layer,size,threshold,iterations,upper_messages,same_layer_messages")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.index, s.size, s.threshold, s.iterations, s.upper_messages, s.same_layer_messages
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    /// Agents A..D = 1..4, anchors 1..5 = 5..9.
    fn example_graph() -> (ConnectivityGraph, BTreeSet<NodeId>) {
        let (a, b, c, d) = (n(1), n(2), n(3), n(4));
        let anchor = |k: u32| n(4 + k);
        let edges = [
            (a, anchor(1)),
            (a, anchor(2)),
            (a, anchor(3)),
            (a, b),
            (a, c),
            (b, anchor(4)),
            (b, anchor(5)),
            (b, c),
            (c, anchor(3)),
            (c, d),
            (d, anchor(5)),
        ];
        let g = ConnectivityGraph::from_edges(9, edges).unwrap();
        (g, (5..=9).map(n).collect())
    }

    #[test]
    fn confidence_levels() {
        assert_eq!(confidence(0), 0);
        assert_eq!(confidence(1), 1);
        assert_eq!(confidence(2), 2);
        assert_eq!(confidence(3), 3);
        assert_eq!(confidence(5), 3);
    }

    #[test]
    fn example_layers_one_agent_each() {
        let (g, anchors) = example_graph();
        let la = assign_layers(&g, &anchors, 3, GateMode::Adaptive).unwrap();
        let layers: Vec<Vec<NodeId>> = la.layers.iter().map(|l| l.members.keys().copied().collect()).collect();
        assert_eq!(layers, vec![vec![n(1)], vec![n(2)], vec![n(3)], vec![n(4)]]);
        assert_eq!(la.layers[3].members[&n(4)].upper, vec![n(3), n(9)]);
        assert_eq!(la.layers.iter().map(|l| l.threshold).collect::<Vec<_>>(), vec![3, 3, 3, 2]);
        assert!(la.unassignable.is_empty());
    }

    #[test]
    fn threshold_zero_is_one_flat_layer() {
        let (g, anchors) = example_graph();
        let la = assign_layers(&g, &anchors, 0, GateMode::Adaptive).unwrap();
        assert_eq!(la.layer_count(), 1);
        assert_eq!(la.layers[0].len(), 4);
        for i in 1..=4 {
            assert_eq!(candidate_refs(n(i), 1, &la).unwrap(), g.neighbors(n(i)).to_vec());
        }
    }

    #[test]
    fn isolated_agent_unassignable() {
        let g = ConnectivityGraph::from_edges(3, [(n(1), n(3))]).unwrap();
        let anchors = BTreeSet::from([n(3)]);
        for t in 0..=3 {
            let la = assign_layers(&g, &anchors, t, GateMode::Adaptive).unwrap();
            assert_eq!(la.unassignable, vec![n(2)]);
        }
    }

    #[test]
    fn first_layer_gate_merges_buckets() {
        let (g, anchors) = example_graph();
        // threshold 1 admits A (3 anchors), B (2), C (1), D (1) at once
        let la = assign_layers(&g, &anchors, 1, GateMode::Adaptive).unwrap();
        assert_eq!(la.layer_count(), 1);
        assert_eq!(la.layers[0].threshold, 1);
        // threshold 2 admits A and B, then C (A, B, 3), then D
        let la = assign_layers(&g, &anchors, 2, GateMode::Adaptive).unwrap();
        let sizes: Vec<usize> = la.layers.iter().map(Layer::len).collect();
        assert_eq!(sizes, vec![2, 1, 1]);
    }

    #[test]
    fn strict_mode_leaves_weak_agents_out() {
        let (g, anchors) = example_graph();
        let la = assign_layers(&g, &anchors, 3, GateMode::Strict).unwrap();
        assert_eq!(la.unassignable, vec![n(4)]);
    }

    #[test]
    fn candidate_reference_branches() {
        // agent 1 with four anchors; agents 2, 3 with two anchors and each other
        let edges = [
            (n(1), n(4)),
            (n(1), n(5)),
            (n(1), n(6)),
            (n(1), n(7)),
            (n(2), n(4)),
            (n(2), n(5)),
            (n(3), n(6)),
            (n(3), n(7)),
            (n(2), n(3)),
        ];
        let g = ConnectivityGraph::from_edges(7, edges).unwrap();
        let anchors: BTreeSet<NodeId> = (4..=7).map(n).collect();
        let la = assign_layers(&g, &anchors, 2, GateMode::Adaptive).unwrap();
        assert_eq!(la.layer_count(), 1);
        assert_eq!(candidate_refs(n(1), 1, &la).unwrap(), vec![n(4), n(5), n(6), n(7)]);
        assert_eq!(candidate_refs(n(2), 1, &la).unwrap(), vec![n(3), n(4), n(5)]);
        assert!(candidate_refs(n(2), 2, &la).is_err());

        // same agent without a same-layer partner keeps its two references
        let g = ConnectivityGraph::from_edges(7, edges[..8].iter().copied()).unwrap();
        let la = assign_layers(&g, &anchors, 2, GateMode::Adaptive).unwrap();
        assert_eq!(candidate_refs(n(2), 1, &la).unwrap(), vec![n(4), n(5)]);
    }

    #[test]
    fn reference_sets_grow() {
        let (g, anchors) = example_graph();
        let la = assign_layers(&g, &anchors, 3, GateMode::Adaptive).unwrap();
        let mut prev = la.reference_set(1);
        assert_eq!(prev, anchors);
        for l in 2..=la.layer_count() as u32 + 1 {
            let next = la.reference_set(l);
            assert!(prev.is_subset(&next) && prev.len() < next.len());
            prev = next;
        }
    }

    #[test]
    fn json_export() {
        let (g, anchors) = example_graph();
        let la = assign_layers(&g, &anchors, 3, GateMode::Adaptive).unwrap();
        let v: serde_json::Value = serde_json::from_str(&la.to_json().unwrap()).unwrap();
        assert_eq!(v["layers"]["4"], serde_json::json!([4]));
        assert_eq!(v["thresholds"]["4"], 2);
        assert_eq!(v["unassignable"], serde_json::json!([]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (g, _) = example_graph();
        assert!(assign_layers(&g, &BTreeSet::new(), 3, GateMode::Adaptive).is_err());
        assert!(assign_layers(&g, &BTreeSet::from([n(9)]), 4, GateMode::Adaptive).is_err());
    }
}
