//! Cooperative sensor-network localization with nonparametric belief
//! propagation (NBP).
//!
//! Besides standard loopy NBP and spanning-tree restricted baselines, the
//! crate implements a layered scheme: agents are activated in layers by a
//! bootstrap-percolation process with an adaptive connection-degree
//! threshold, and messages only flow from upper layers down (plus, for
//! poorly-referenced agents, within a layer).
//!
//! Typical flow:
//!
//! ```
//! use hnbp::{experiment, graph, hierarchy, nbp, scenario};
//!
//! let cfg = experiment::preset(scenario::NetworkPreset::Net2);
//! let sc = scenario::generate_scenario(&cfg, 1).unwrap();
//! let g = graph::build_connectivity(&sc);
//! let meas = scenario::measure_distances(&sc, &g, 1).unwrap();
//! let anchors = sc.anchor_ids().collect();
//! let layers = hierarchy::assign_layers(&g, &anchors, 3, hierarchy::GateMode::Adaptive).unwrap();
//! let run = nbp::RunConfig { k: 20, iterations: 2, ..Default::default() };
//! let out = hierarchy::run_hierarchical_nbp(&sc, &g, &meas, &layers, &run).unwrap();
//! assert_eq!(out.beliefs.len(), sc.node_count());
//! ```

pub mod csvfmt;
pub mod error;
pub mod experiment;
pub mod geom;
pub mod graph;
pub mod hierarchy;
mod kernel;
pub mod metrics;
pub mod nbp;
pub mod particles;
pub mod scenario;
pub mod seed;
pub mod traffic;

pub use error::{Error, Result};
pub use geom::Point;
pub use scenario::NodeId;
