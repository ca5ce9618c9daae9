//! Particle-based message passing: message construction, marginal fusion and
//! the synchronous iteration engine behind every inference variant.
//!
//! Each message and each fusion step draws from its own random stream keyed
//! by (run seed, node ids, global iteration), so results are independent of
//! scheduling and thread count.

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::graph::{ConnectivityGraph, TreeGraph};
use crate::particles::{self, init_belief, MixtureMessage, ParticleBelief, DENSITY_FLOOR};
use crate::scenario::{MeasurementSet, NodeId, NoiseModel, Scenario};
use crate::seed::{self, Stream};
use crate::traffic::{MessageKind, TrafficLog, TrafficRecord};

/// Smallest kernel variance ever used (m²).
const MIN_BANDWIDTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Particles per belief and components per message.
    pub k: usize,
    /// Message exchanges (per layer for layered runs).
    pub iterations: usize,
    /// Fusion pool multiplier: h·K candidates are drawn per update.
    pub h: f64,
    pub seed: u64,
    /// Stop a phase early once the mean MMSE shift over one iteration drops
    /// below this many meters.
    #[serde(default)]
    pub early_stop: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { k: 200, iterations: 10, h: 2.0, seed: 0, early_stop: None }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if !(self.h >= 1.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("h must be >= 1, got {}", self.h)));
        }
        Ok(())
    }
}

/// Message from a sender belief through one range measurement.
///
/// `reverse` is the receiver's previous message back to the sender; `None`
/// stands for the uniform message.
pub fn compute_message(
    sender: &ParticleBelief,
    reverse: Option<&MixtureMessage>,
    d_meas: f64,
    noise: &NoiseModel,
    k: usize,
    seed: u64,
) -> Result<MixtureMessage> {
    let mut rng = seed::rng(seed);
    compute_message_with(sender, reverse, d_meas, noise, k, &mut rng)
}

fn compute_message_with(
    sender: &ParticleBelief,
    reverse: Option<&MixtureMessage>,
    d_meas: f64,
    noise: &NoiseModel,
    k: usize,
    rng: &mut seed::Rng,
) -> Result<MixtureMessage> {
    if !(d_meas > 0.0 && d_meas.is_finite()) {
        return Err(Error::InvalidMeasurement(d_meas));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let sigma = noise.sigma(d_meas);
    let src = sender.samples();
    let src_w = sender.weights();
    let n = src.len();

    let mut means = Vec::with_capacity(k);
    for j in 0..k {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let eps: f64 = rng.sample(StandardNormal);
        let r = d_meas + sigma * eps;
        let (s, c) = theta.sin_cos();
        means.push(src[j % n] + Point::new(s, c) * r);
    }

    let weights = match reverse {
        None => (0..k).map(|j| src_w[j % n]).collect(),
        Some(rev) => {
            let origins: Vec<Point> = (0..k).map(|j| src[j % n]).collect();
            let mut log_rev = Vec::with_capacity(k);
            rev.log_density_into(&origins, &mut log_rev);
            let log_w: Vec<f64> = (0..k).map(|j| src_w[j % n].ln() - log_rev[j]).collect();
            let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                return Err(Error::DegenerateWeights("sender belief carries no weight".into()));
            }
            log_w.iter().map(|l| (l - top).exp()).collect()
        }
    };

    let shrink = (k as f64).powf(-1.0 / 3.0);
    let [sxx, _, syy] = sender.covariance();
    let bandwidth = (shrink * (0.5 * (sxx + syy) + sigma * sigma)).max(MIN_BANDWIDTH);
    MixtureMessage::new(&means, weights, bandwidth)
}

/// Weighted candidate pool drawn from a set of incoming messages.
struct FusionPool {
    points: Vec<Point>,
    log_weights: Vec<f64>,
    /// No candidate has all message densities above the floor.
    degenerate: bool,
}

fn fusion_pool(messages: &[&MixtureMessage], k: usize, h: f64, rng: &mut seed::Rng) -> Result<FusionPool> {
    if messages.is_empty() {
        return Err(Error::Config("fusion needs at least one message".into()));
    }
    let per_message = ((h * k as f64) / messages.len() as f64).floor() as usize;
    if per_message == 0 {
        return Err(Error::Config(format!(
            "h*K = {} is smaller than the number of fused messages ({})",
            h * k as f64,
            messages.len()
        )));
    }
    let mut points = Vec::with_capacity(per_message * messages.len());
    for m in messages {
        points.extend(m.sample(per_message, rng));
    }

    let n = points.len();
    let floor_ln = DENSITY_FLOOR.ln();
    let mut sum_log = vec![0.0; n];
    let mut max_log = vec![f64::NEG_INFINITY; n];
    let mut per_msg: Vec<Vec<f64>> = Vec::with_capacity(messages.len());
    let mut floored = vec![false; n];
    for m in messages {
        let mut ld = Vec::with_capacity(n);
        m.log_density_into(&points, &mut ld);
        for c in 0..n {
            sum_log[c] += ld[c];
            max_log[c] = max_log[c].max(ld[c]);
            floored[c] |= ld[c] <= floor_ln;
        }
        per_msg.push(ld);
    }
    // log(Π m_u / Σ m_u), the denominator through log-sum-exp
    let log_weights = (0..n)
        .map(|c| {
            let s: f64 = per_msg.iter().map(|ld| (ld[c] - max_log[c]).exp()).sum();
            sum_log[c] - (max_log[c] + s.ln())
        })
        .collect();
    Ok(FusionPool { points, log_weights, degenerate: floored.iter().all(|f| *f) })
}

fn pool_to_belief(pool: &FusionPool, k: usize, rng: &mut seed::Rng) -> Result<ParticleBelief> {
    let top = pool.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = pool.log_weights.iter().map(|l| (l - top).exp()).collect();
    particles::resample_with(&pool.points, &w, k, rng)
}

/// Fuses incoming messages into a K-sample belief: ⌊hK/|F|⌋ candidates per
/// message, weighted by Π_u m_u(x) / Σ_u m_u(x), then systematically
/// resampled. Returns an error when every candidate falls outside the support
/// of some message; inside a run such pools are still resampled and counted.
pub fn fuse_marginal(messages: &[&MixtureMessage], k: usize, h: f64, seed: u64) -> Result<ParticleBelief> {
    let mut rng = seed::rng(seed);
    let pool = fusion_pool(messages, k, h, &mut rng)?;
    if pool.degenerate {
        return Err(Error::DegenerateWeights(
            "every candidate falls outside the support of some message".into(),
        ));
    }
    pool_to_belief(&pool, k, &mut rng)
}

/// One synchronous message-passing phase: `receivers[n]` fuses messages from
/// `refs[n]` for up to `iterations` rounds. Senders that are not receivers
/// keep their current beliefs.
pub(crate) struct Phase {
    pub receivers: Vec<NodeId>,
    pub refs: Vec<Vec<NodeId>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseStats {
    pub iterations: u32,
    pub messages: usize,
    /// Fusions where every candidate fell outside the support of some
    /// incoming message.
    pub degenerate_fusions: usize,
    pub elapsed: Duration,
}

pub(crate) struct Engine<'a> {
    pub scenario: &'a Scenario,
    pub measurements: &'a MeasurementSet,
    pub cfg: &'a RunConfig,
    /// Layer index per node (anchors 0).
    pub layer_of: &'a [u32],
}

struct ReceiverUpdate {
    messages: Vec<(NodeId, MixtureMessage)>,
    belief: ParticleBelief,
    degenerate: bool,
}

impl Engine<'_> {
    pub fn initial_beliefs(&self) -> Result<Vec<ParticleBelief>> {
        (0..self.scenario.node_count())
            .map(|idx| init_belief(NodeId::from_idx(idx), self.scenario, self.cfg.k, self.cfg.seed))
            .collect()
    }

    pub fn run_phase(
        &self,
        phase: &Phase,
        beliefs: &mut [ParticleBelief],
        log: &mut TrafficLog,
        iteration_base: u32,
    ) -> Result<PhaseStats> {
        let started = Instant::now();
        let cfg = self.cfg;
        // d̃ for every directed edge used in this phase
        let mut dists: Vec<Vec<f64>> = Vec::with_capacity(phase.receivers.len());
        for (i, refs) in phase.receivers.iter().zip(&phase.refs) {
            let row = refs
                .iter()
                .map(|s| {
                    self.measurements.get(*s, *i).ok_or_else(|| {
                        Error::Integrity(format!("no measurement for edge ({s}, {i})"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            dists.push(row);
        }
        // i sends to s in this phase iff s is a receiver listing i as a reference
        let sends: BTreeSet<(NodeId, NodeId)> = phase
            .receivers
            .iter()
            .zip(&phase.refs)
            .flat_map(|(i, refs)| refs.iter().map(move |s| (*s, *i)))
            .collect();

        let mut prev: HashMap<(NodeId, NodeId), MixtureMessage> = HashMap::new();
        let mut stats = PhaseStats::default();
        for t in 1..=cfg.iterations as u32 {
            let global_t = iteration_base + t;
            let snapshot: &[ParticleBelief] = beliefs;
            let updates: Vec<Result<ReceiverUpdate>> = phase
                .receivers
                .par_iter()
                .zip(phase.refs.par_iter())
                .zip(dists.par_iter())
                .map(|((&i, refs), row)| {
                    let mut messages = Vec::with_capacity(refs.len());
                    for (&s, &d) in refs.iter().zip(row) {
                        let reverse = if sends.contains(&(i, s)) { prev.get(&(i, s)) } else { None };
                        let mut rng = seed::derived_rng(
                            cfg.seed,
                            Stream::Message,
                            &[s.0 as u64, i.0 as u64, global_t as u64],
                        );
                        let msg = compute_message_with(
                            &snapshot[s.idx()],
                            reverse,
                            d,
                            &self.scenario.noise,
                            cfg.k,
                            &mut rng,
                        )?;
                        messages.push((s, msg));
                    }
                    let refs_msgs: Vec<&MixtureMessage> = messages.iter().map(|(_, m)| m).collect();
                    let mut rng =
                        seed::derived_rng(cfg.seed, Stream::Fusion, &[i.0 as u64, global_t as u64]);
                    let pool = fusion_pool(&refs_msgs, cfg.k, cfg.h, &mut rng)?;
                    // Even when every candidate misses some message, the log weights
                    // still rank candidates by how few messages they contradict.
                    let belief = pool_to_belief(&pool, cfg.k, &mut rng)?;
                    Ok(ReceiverUpdate { messages, belief, degenerate: pool.degenerate })
                })
                .collect();

            let mut shift = 0.0;
            let mut next = HashMap::with_capacity(prev.len());
            for (&i, update) in phase.receivers.iter().zip(updates) {
                let update = update?;
                for (s, msg) in update.messages {
                    let (sl, rl) = (self.layer_of[s.idx()], self.layer_of[i.idx()]);
                    log.push(TrafficRecord {
                        iteration: global_t,
                        sender: s,
                        receiver: i,
                        sender_layer: sl,
                        receiver_layer: rl,
                        kind: if sl < rl { MessageKind::Upper } else { MessageKind::SameLayer },
                    });
                    stats.messages += 1;
                    if sends.contains(&(s, i)) {
                        next.insert((s, i), msg);
                    }
                }
                if update.degenerate {
                    stats.degenerate_fusions += 1;
                }
                shift += update.belief.mmse_estimate().dist(beliefs[i.idx()].mmse_estimate());
                beliefs[i.idx()] = update.belief;
            }
            log.touch_iteration(global_t);
            prev = next;
            stats.iterations = t;
            if let Some(tol) = cfg.early_stop {
                if !phase.receivers.is_empty() && shift / (phase.receivers.len() as f64) < tol {
                    break;
                }
            }
        }
        stats.elapsed = started.elapsed();
        Ok(stats)
    }
}

/// Final beliefs (indexed by `NodeId::idx`, anchors included) and the message log.
#[derive(Debug, Clone)]
pub struct NbpOutput {
    pub beliefs: Vec<ParticleBelief>,
    pub log: TrafficLog,
    /// Agents with nobody to listen to; their belief is the prior.
    pub unlocalized: Vec<NodeId>,
    pub stats: PhaseStats,
}

impl NbpOutput {
    pub fn estimate(&self, id: NodeId) -> Point {
        self.beliefs[id.idx()].mmse_estimate()
    }
}

/// Layer indices of a flat (single-layer) run: anchors 0, agents 1.
pub(crate) fn flat_layers(scenario: &Scenario) -> Vec<u32> {
    (0..scenario.node_count()).map(|idx| if idx < scenario.agent_count() { 1 } else { 0 }).collect()
}

/// Every agent fuses messages from all of its neighbors; reference lists
/// follow the graph's ascending neighbor order.
pub(crate) fn flat_phase(scenario: &Scenario, graph: &ConnectivityGraph) -> (Phase, Vec<NodeId>) {
    let mut receivers = Vec::new();
    let mut refs = Vec::new();
    let mut unlocalized = Vec::new();
    for i in scenario.agent_ids() {
        let nb = graph.neighbors(i);
        if nb.is_empty() {
            unlocalized.push(i);
        } else {
            receivers.push(i);
            refs.push(nb.to_vec());
        }
    }
    (Phase { receivers, refs }, unlocalized)
}

fn run_flat(
    scenario: &Scenario,
    graph: &ConnectivityGraph,
    measurements: &MeasurementSet,
    cfg: &RunConfig,
) -> Result<NbpOutput> {
    cfg.validate()?;
    if graph.node_count() != scenario.node_count() {
        return Err(Error::Integrity("graph and scenario disagree on node count".into()));
    }
    let layer_of = flat_layers(scenario);
    let engine = Engine { scenario, measurements, cfg, layer_of: &layer_of };
    let mut beliefs = engine.initial_beliefs()?;
    let (phase, unlocalized) = flat_phase(scenario, graph);
    let mut log = TrafficLog::new();
    let stats = engine.run_phase(&phase, &mut beliefs, &mut log, 0)?;
    Ok(NbpOutput { beliefs, log, unlocalized, stats })
}

/// Standard (loopy) NBP over the full connectivity graph.
pub fn run_standard_nbp(
    scenario: &Scenario,
    graph: &ConnectivityGraph,
    measurements: &MeasurementSet,
    cfg: &RunConfig,
) -> Result<NbpOutput> {
    run_flat(scenario, graph, measurements, cfg)
}

/// NBP restricted to the retained edges of a spanning tree or forest.
pub fn run_tree_nbp(
    scenario: &Scenario,
    graph: &ConnectivityGraph,
    tree: &TreeGraph,
    measurements: &MeasurementSet,
    cfg: &RunConfig,
) -> Result<NbpOutput> {
    let restricted = graph.restrict(&tree.retained_edges)?;
    run_flat(scenario, &restricted, measurements, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Node;

    fn dirac(x: f64, y: f64, k: usize) -> ParticleBelief {
        ParticleBelief::dirac(Point::new(x, y), k)
    }

    #[test]
    fn noiseless_anchor_message_is_a_circle() {
        let m = compute_message(&dirac(0.0, 0.0, 50), None, 5.0, &NoiseModel::NOISELESS, 50, 3).unwrap();
        for p in m.means() {
            assert!((p.norm() - 5.0).abs() < 1e-12);
        }
        assert!(m.bandwidth() > 0.0);
    }

    #[test]
    fn radial_statistics_follow_noise_model() {
        let noise = NoiseModel { sigma0: 0.2, k_sigma: 0.01 };
        let k = 10_000;
        let m = compute_message(&dirac(0.0, 0.0, k), None, 5.0, &noise, k, 8).unwrap();
        let r: Vec<f64> = m.means().map(|p| p.norm()).collect();
        let mean = r.iter().sum::<f64>() / k as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
        assert!((mean - 5.0).abs() < 0.01, "{mean}");
        assert!((sd - 0.25).abs() < 0.05 * 0.25, "{sd}");
    }

    #[test]
    fn uniform_reverse_keeps_sender_weights() {
        let b = ParticleBelief::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            vec![0.5, 0.3, 0.2],
        )
        .unwrap();
        let m = compute_message(&b, None, 2.0, &NoiseModel::default(), 3, 0).unwrap();
        for (a, e) in m.weights().iter().zip([0.5, 0.3, 0.2]) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_message_divides_weights() {
        let b = ParticleBelief::equal_weight(vec![Point::new(0.0, 0.0), Point::new(4.0, 0.0)]);
        let rev = MixtureMessage::new(&[Point::new(0.0, 0.0)], vec![1.0], 1.0).unwrap();
        let m = compute_message(&b, Some(&rev), 2.0, &NoiseModel::default(), 2, 0).unwrap();
        let ratio = m.weights()[1] / m.weights()[0];
        let expected = rev.density(Point::new(0.0, 0.0)) / rev.density(Point::new(4.0, 0.0));
        assert!((ratio / expected - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_distance_rejected() {
        let r = compute_message(&dirac(0.0, 0.0, 4), None, 0.0, &NoiseModel::default(), 4, 0);
        assert!(matches!(r, Err(Error::InvalidMeasurement(_))));
    }

    #[test]
    fn bandwidth_floor_applies() {
        // K = 1: a single mean has zero spread, so only the floor remains
        let noise = NoiseModel { sigma0: 0.5, k_sigma: 0.0 };
        let m = compute_message(&dirac(0.0, 0.0, 1), None, 3.0, &noise, 1, 0).unwrap();
        assert!((m.bandwidth() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_message_fusion_reproduces_it() {
        let msg = MixtureMessage::new(
            &[Point::new(2.0, 3.0), Point::new(4.0, 3.0)],
            vec![0.5, 0.5],
            0.3,
        )
        .unwrap();
        let b = fuse_marginal(&[&msg], 2000, 2.0, 5).unwrap();
        let m = b.mmse_estimate();
        assert!((m.x - 3.0).abs() < 0.08 && (m.y - 3.0).abs() < 0.08, "{m:?}");
        assert_eq!(b.len(), 2000);
    }

    #[test]
    fn fusion_preconditions() {
        let msg = MixtureMessage::new(&[Point::new(0.0, 0.0)], vec![1.0], 1.0).unwrap();
        assert!(fuse_marginal(&[], 10, 2.0, 0).is_err());
        assert!(fuse_marginal(&[&msg, &msg, &msg], 1, 1.0, 0).is_err());
    }

    #[test]
    fn inconsistent_messages_are_degenerate() {
        let a = MixtureMessage::new(&[Point::new(0.0, 0.0)], vec![1.0], 0.01).unwrap();
        let b = MixtureMessage::new(&[Point::new(1000.0, 0.0)], vec![1.0], 0.01).unwrap();
        assert!(matches!(fuse_marginal(&[&a, &b], 50, 2.0, 0), Err(Error::DegenerateWeights(_))));
    }

    fn star_scenario() -> (Scenario, ConnectivityGraph, MeasurementSet) {
        // anchor at the origin, agents on three sides, agents mutually > R apart
        let agents = [(8.0, 0.0), (-8.0, 0.0), (0.0, 8.0)];
        let sc = Scenario {
            area_side: 50.0,
            radio_range: 10.0,
            topology: Default::default(),
            noise: NoiseModel::NOISELESS,
            anchors: vec![Node { id: NodeId(4), position: Point::new(0.0, 0.0) }],
            agents: agents
                .iter()
                .enumerate()
                .map(|(k, &p)| Node { id: NodeId::from_idx(k), position: p.into() })
                .collect(),
            seed: 0,
        };
        let g = crate::graph::build_connectivity(&sc);
        let m = crate::scenario::measure_distances(&sc, &g, 0).unwrap();
        (sc, g, m)
    }

    #[test]
    fn star_agents_get_rings() {
        let (sc, g, m) = star_scenario();
        assert_eq!(g.edge_count(), 3);
        let cfg = RunConfig { k: 300, iterations: 2, ..RunConfig::default() };
        let out = run_standard_nbp(&sc, &g, &m, &cfg).unwrap();
        for i in sc.agent_ids() {
            let b = &out.beliefs[i.idx()];
            // kernel sd is about 2.2 m for a ring of radius 8 at K = 300
            let ring = b.samples().iter().filter(|p| (p.norm() - 8.0).abs() < 5.0).count();
            assert!(ring as f64 > 0.9 * b.len() as f64, "{ring}");
            // a ring's mean sits near its center, far from the true position
            assert!(out.estimate(i).norm() < 4.0);
        }
        assert_eq!(out.log.len(), 3 * 2);
        assert!(out.unlocalized.is_empty());
    }

    #[test]
    fn anchors_never_change() {
        let (sc, g, m) = star_scenario();
        let cfg = RunConfig { k: 50, iterations: 3, ..RunConfig::default() };
        let out = run_standard_nbp(&sc, &g, &m, &cfg).unwrap();
        assert_eq!(out.beliefs[3], ParticleBelief::dirac(Point::new(0.0, 0.0), 50));
    }
}
