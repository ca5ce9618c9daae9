//! One agent heard by three anchors: NBP against a brute-force grid posterior.

use hnbp::graph::build_connectivity;
use hnbp::metrics::median;
use hnbp::nbp::{self, RunConfig};
use hnbp::scenario::{self, Node, NodeId, NoiseModel, Scenario};
use hnbp::{seed, Point};
use rand::Rng;

const ANCHORS: [Point; 3] = [Point::new(20.0, 20.0), Point::new(30.0, 20.0), Point::new(25.0, 29.0)];

fn instance(s: u64) -> Scenario {
    let mut rng = seed::rng(s ^ 0x5eed);
    let agent = loop {
        let p = Point::new(rng.random_range(14.0..36.0), rng.random_range(14.0..36.0));
        if ANCHORS.iter().all(|a| a.dist(p) <= 11.5) {
            break p;
        }
    };
    Scenario {
        area_side: 50.0,
        radio_range: 12.0,
        topology: Default::default(),
        noise: NoiseModel { sigma0: 0.2, k_sigma: 0.01 },
        anchors: ANCHORS.iter().enumerate().map(|(k, &p)| Node { id: NodeId(k as u32 + 2), position: p }).collect(),
        agents: vec![Node { id: NodeId(1), position: agent }],
        seed: s,
    }
}

/// Posterior mean under a uniform prior on the area and the Gaussian range
/// likelihood with σ evaluated at the measured distance.
fn grid_posterior_mean(sc: &Scenario, measured: &[f64]) -> Point {
    let step = 0.02;
    let n = (sc.area_side / step) as usize;
    let sig: Vec<f64> = measured.iter().map(|d| sc.noise.sigma(*d)).collect();
    let log_post = |p: Point| -> f64 {
        sc.anchors
            .iter()
            .zip(measured.iter().zip(&sig))
            .map(|(a, (d, s))| {
                let r = (a.position.dist(p) - d) / s;
                -0.5 * r * r - s.ln()
            })
            .sum()
    };
    let mut best = f64::NEG_INFINITY;
    let mut cells = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let p = Point::new((i as f64 + 0.5) * step, (j as f64 + 0.5) * step);
            let l = log_post(p);
            best = best.max(l);
            cells.push((p, l));
        }
    }
    let (mut sum, mut acc) = (0.0, Point::new(0.0, 0.0));
    for (p, l) in cells {
        let w = (l - best).exp();
        sum += w;
        acc = acc + p * w;
    }
    acc * (1.0 / sum)
}

fn oracle_gap(s: u64, k: usize) -> f64 {
    let sc = instance(s);
    let g = build_connectivity(&sc);
    assert_eq!(g.degree(NodeId(1)), 3);
    let meas = scenario::measure_distances(&sc, &g, s).unwrap();
    let measured: Vec<f64> = sc.anchor_ids().map(|a| meas.get(NodeId(1), a).unwrap()).collect();
    let cfg = RunConfig { k, iterations: 1, seed: s, ..RunConfig::default() };
    let out = nbp::run_standard_nbp(&sc, &g, &meas, &cfg).unwrap();
    out.estimate(NodeId(1)).dist(grid_posterior_mean(&sc, &measured))
}

#[test]
fn nbp_tracks_the_grid_posterior() {
    let gaps: Vec<f64> = (0..7).map(|s| oracle_gap(s, 400)).collect();
    let m = median(&gaps).unwrap();
    assert!(m < 0.2, "{gaps:?}");
}
