//! Error CDFs, link accounting, analytic complexity and the CER diagnostic.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{E, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::particles::ParticleBelief;
use crate::scenario::NodeId;
use crate::traffic::TrafficLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl CdfCurve {
    /// Empirical CDF, `P(error < e_th)`, of a pooled error sample.
    pub fn from_errors(errors: &[f64], thresholds: &[f64]) -> Result<Self> {
        check_ascending(thresholds)?;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let values = thresholds
            .iter()
            .map(|&th| {
                if sorted.is_empty() {
                    0.0
                } else {
                    sorted.partition_point(|e| *e < th) as f64 / sorted.len() as f64
                }
            })
            .collect();
        Ok(CdfCurve { thresholds: thresholds.to_vec(), values })
    }

    /// Value at an exact threshold of the curve.
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|t| *t == threshold).map(|k| self.values[k])
    }

    /// `threshold_m,cdf`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "threshold_m,cdf")?;
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            writeln!(out, "{},{}", sig9(*t), sig9(*v))?;
        }
        Ok(())
    }
}

fn check_ascending(thresholds: &[f64]) -> Result<()> {
    if thresholds.iter().any(|t| !t.is_finite()) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("CDF thresholds must be finite and strictly ascending".into()));
    }
    Ok(())
}

/// Thresholds 0, 0.05, ..., `max` (inclusive).
pub fn threshold_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

/// Euclidean errors of every scored node; fails if an estimate is missing.
pub fn position_errors(estimates: &BTreeMap<NodeId, Point>, truth: &BTreeMap<NodeId, Point>) -> Result<Vec<f64>> {
    truth
        .iter()
        .map(|(id, t)| estimates.get(id).map(|e| e.dist(*t)).ok_or(Error::UnknownNode(*id)))
        .collect()
}

pub fn error_cdf(
    estimates: &BTreeMap<NodeId, Point>,
    truth: &BTreeMap<NodeId, Point>,
    thresholds: &[f64],
) -> Result<CdfCurve> {
    check_ascending(thresholds)?;
    CdfCurve::from_errors(&position_errors(estimates, truth)?, thresholds)
}

/// Linear-interpolated quantile (`q` in [0, 1]) of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Per-network error quartiles, to show spread hidden by pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorQuantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

pub fn error_quantiles(errors: &[f64]) -> Option<ErrorQuantiles> {
    Some(ErrorQuantiles { q25: quantile(errors, 0.25)?, median: quantile(errors, 0.5)?, q75: quantile(errors, 0.75)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityModel {
    Nbp,
    Bfs,
    Hierarchical,
}

/// Average number of links in use: πN²p² for NBP, 2(N−1) for a BFS tree and
/// πN²p²/L² for L layers. `p` is the radio range relative to the area side.
pub fn analytic_complexity(model: ComplexityModel, n: usize, p: f64, layers: usize) -> f64 {
    let n = n as f64;
    match model {
        ComplexityModel::Nbp => PI * n * n * p * p,
        ComplexityModel::Bfs => 2.0 * (n - 1.0),
        ComplexityModel::Hierarchical => PI * n * n * p * p / (layers as f64 * layers as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkCount {
    PerIterationMean,
    Total,
}

/// Which messages are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkScope {
    #[default]
    All,
    /// Agent-to-agent messages only (anchors sit in layer 0).
    AgentsOnly,
}

pub fn measured_links(log: &TrafficLog, mode: LinkCount) -> f64 {
    measured_links_in(log, mode, LinkScope::All)
}

pub fn measured_links_in(log: &TrafficLog, mode: LinkCount, scope: LinkScope) -> f64 {
    let counted = log.records().iter().filter(|r| scope == LinkScope::All || r.sender_layer > 0);
    match mode {
        LinkCount::Total => counted.count() as f64,
        LinkCount::PerIterationMean => {
            if log.iterations() == 0 {
                return 0.0;
            }
            let pairs: BTreeSet<(u32, NodeId, NodeId)> = counted.map(|r| (r.iteration, r.sender, r.receiver)).collect();
            pairs.len() as f64 / log.iterations() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub algorithm: ComplexityModel,
    pub n: usize,
    pub p: f64,
    pub l: usize,
    pub analytic_value: f64,
    pub measured_links: f64,
}

/// Complementary entropy ratio of a belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cer {
    pub value: f64,
    /// False when the estimated entropy is not positive, where the ratio has
    /// no meaning.
    pub meaningful: bool,
}

fn cer_from_entropies(h_ref: f64, h_est: f64) -> Cer {
    Cer { value: 1.0 - h_ref / h_est, meaningful: h_est > 0.0 }
}

/// `1 − H(ref)/H(est)` with moment-matched Gaussian entropies; two anchor
/// Diracs give 0.
pub fn cer(est: &ParticleBelief, reference: &ParticleBelief) -> Cer {
    let (he, hr) = (est.gaussian_entropy(), reference.gaussian_entropy());
    if he.degenerate && hr.degenerate {
        return Cer { value: 0.0, meaningful: true };
    }
    cer_from_entropies(hr.nats, he.nats)
}

/// CER against an isotropic Gaussian of std `sigma` at the true position.
pub fn cer_against_truth(est: &ParticleBelief, sigma: f64) -> Cer {
    let h_ref = (2.0 * PI * E).ln() + 2.0 * sigma.ln();
    cer_from_entropies(h_ref, est.gaussian_entropy().nats)
}
