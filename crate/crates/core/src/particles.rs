//! Nonparametric position representations: weighted particle beliefs and
//! isotropic Gaussian-mixture messages.

use std::f64::consts::{E, PI};
use std::hash::{Hash, Hasher};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::kernel;
use crate::scenario::{NodeId, Scenario};
use crate::seed::{self, Stream};

/// Densities are clamped from below so that weight ratios stay finite.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Regularization added to each axis variance before taking entropies (m²).
pub const ENTROPY_EPS: f64 = 1e-6;

const NORMALIZATION_TOL: f64 = 1e-9;

fn normalize(weights: &mut [f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::DegenerateWeights("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights("weights sum to zero".into()));
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(())
}

/// K weighted samples of one node's position posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBelief {
    samples: Vec<Point>,
    weights: Vec<f64>,
}

impl ParticleBelief {
    /// Normalizes `weights`; fails on empty input or zero total weight.
    pub fn new(samples: Vec<Point>, mut weights: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.len() != weights.len() {
            return Err(Error::Integrity(format!(
                "belief needs matching non-empty samples and weights ({} vs {})",
                samples.len(),
                weights.len()
            )));
        }
        normalize(&mut weights)?;
        Ok(ParticleBelief { samples, weights })
    }

    pub fn equal_weight(samples: Vec<Point>) -> Self {
        assert!(!samples.is_empty(), "belief needs at least one sample");
        let w = 1.0 / samples.len() as f64;
        let weights = vec![w; samples.len()];
        ParticleBelief { samples, weights }
    }

    /// Weights are non-negative and sum to one within 1e-9.
    pub fn is_normalized(&self) -> bool {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().all(|w| *w >= 0.0) && (total - 1.0).abs() < NORMALIZATION_TOL
    }

    pub fn dirac(at: Point, k: usize) -> Self {
        Self::equal_weight(vec![at; k.max(1)])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Point] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mmse_estimate(&self) -> Point {
        let (mut x, mut y) = (0.0, 0.0);
        for (p, w) in self.samples.iter().zip(&self.weights) {
            x += w * p.x;
            y += w * p.y;
        }
        Point::new(x, y)
    }

    /// Weighted sample covariance `[sxx, sxy, syy]`.
    pub fn covariance(&self) -> [f64; 3] {
        weighted_covariance(self.samples.iter().copied(), &self.weights)
    }

    /// Entropy of the moment-matched bivariate Gaussian, `0.5·ln((2πe)²·det(Σ + εI))`.
    pub fn gaussian_entropy(&self) -> Entropy {
        let [sxx, sxy, syy] = self.covariance();
        let det = (sxx + ENTROPY_EPS) * (syy + ENTROPY_EPS) - sxy * sxy;
        let first = self.samples[0];
        let degenerate = self.samples.iter().all(|p| *p == first);
        Entropy { nats: 0.5 * ((2.0 * PI * E).powi(2) * det).ln(), degenerate }
    }

    /// Stable fingerprint of the exact sample and weight bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (p, w) in self.samples.iter().zip(&self.weights) {
            p.x.to_bits().hash(&mut h);
            p.y.to_bits().hash(&mut h);
            w.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Rows `node_id,sample_index,x,y,weight` (no header).
    pub fn write_csv_rows<W: Write>(&self, node: NodeId, out: &mut W) -> Result<()> {
        for (k, (p, w)) in self.samples.iter().zip(&self.weights).enumerate() {
            writeln!(out, "{},{},{},{},{}", node, k, sig9(p.x), sig9(p.y), sig9(*w))?;
        }
        Ok(())
    }
}

pub const BELIEF_CSV_HEADER: &str = "node_id,sample_index,x,y,weight";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropy {
    pub nats: f64,
    /// All samples coincide; `nats` is the regularization floor.
    pub degenerate: bool,
}

fn weighted_covariance(points: impl Iterator<Item = Point> + Clone, weights: &[f64]) -> [f64; 3] {
    let (mut mx, mut my) = (0.0, 0.0);
    for (p, w) in points.clone().zip(weights) {
        mx += w * p.x;
        my += w * p.y;
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (p, w) in points.zip(weights) {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    [sxx, sxy, syy]
}

/// Prior belief: agents are uniform over the area, anchors are a Dirac at
/// their known position.
pub fn init_belief(node: NodeId, scenario: &Scenario, k: usize, seed: u64) -> Result<ParticleBelief> {
    if k == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    if scenario.is_anchor(node) {
        let at = scenario.position(node).ok_or(Error::UnknownNode(node))?;
        return Ok(ParticleBelief::dirac(at, k));
    }
    if !scenario.is_agent(node) {
        return Err(Error::UnknownNode(node));
    }
    let a = scenario.area_side;
    let mut rng = seed::derived_rng(seed, Stream::Prior, &[node.0 as u64]);
    let samples = (0..k)
        .map(|_| Point::new(rng.random_range(0.0..=a), rng.random_range(0.0..=a)))
        .collect();
    Ok(ParticleBelief::equal_weight(samples))
}

/// Kernel terms with exponent below `-KERNEL_CUTOFF` are skipped; each is
/// below e^-50 ≈ 2e-22 of its component weight.
const KERNEL_CUTOFF: f64 = 50.0;
const MAX_CELLS_PER_AXIS: usize = 64;

/// Components bucketed on a uniform grid whose cells are at least as wide
/// as the cutoff radius, so a query only visits a 3×3 block of cells.
#[derive(Debug, Clone, PartialEq)]
struct CellIndex {
    x0: f64,
    y0: f64,
    cell: f64,
    radius: f64,
    cols: usize,
    rows: usize,
    /// Component range of cell `c` is `starts[c]..starts[c + 1]` (row-major).
    starts: Vec<u32>,
    mx: Vec<f64>,
    my: Vec<f64>,
    w: Vec<f64>,
}

impl CellIndex {
    fn build(mx: &[f64], my: &[f64], w: &[f64], bandwidth: f64) -> Self {
        let radius = (2.0 * bandwidth * KERNEL_CUTOFF).sqrt();
        let (x0, x1) = mx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (y0, y1) = my.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (x1 - x0).max(y1 - y0);
        let cell = radius.max(span / MAX_CELLS_PER_AXIS as f64).max(f64::MIN_POSITIVE);
        let cols = ((x1 - x0) / cell) as usize + 1;
        let rows = ((y1 - y0) / cell) as usize + 1;
        let id = |k: usize| {
            let c = (((mx[k] - x0) / cell) as usize).min(cols - 1);
            let r = (((my[k] - y0) / cell) as usize).min(rows - 1);
            r * cols + c
        };
        let mut starts = vec![0u32; cols * rows + 1];
        for k in 0..mx.len() {
            starts[id(k) + 1] += 1;
        }
        for c in 0..cols * rows {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let n = mx.len();
        let (mut sx, mut sy, mut sw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            let slot = &mut fill[id(k)];
            let j = *slot as usize;
            *slot += 1;
            sx[j] = mx[k];
            sy[j] = my[k];
            sw[j] = w[k];
        }
        CellIndex { x0, y0, cell, radius, cols, rows, starts, mx: sx, my: sy, w: sw }
    }

    /// Cell span `[lo, hi]` along one axis touched by `q ± radius`.
    fn span(&self, q: f64, origin: f64, count: usize) -> Option<(usize, usize)> {
        let lo = ((q - self.radius - origin) / self.cell).floor();
        let hi = ((q + self.radius - origin) / self.cell).floor();
        if hi < 0.0 || lo > (count - 1) as f64 {
            return None;
        }
        Some((lo.max(0.0) as usize, (hi as usize).min(count - 1)))
    }

    fn gauss_sum(&self, qx: f64, qy: f64, inv_two_var: f64) -> f64 {
        let (Some((c0, c1)), Some((r0, r1))) =
            (self.span(qx, self.x0, self.cols), self.span(qy, self.y0, self.rows))
        else {
            return 0.0;
        };
        let mut total = 0.0;
        for r in r0..=r1 {
            let a = self.starts[r * self.cols + c0] as usize;
            let b = self.starts[r * self.cols + c1 + 1] as usize;
            if a < b {
                total += kernel::gauss_sum(qx, qy, &self.mx[a..b], &self.my[a..b], &self.w[a..b], inv_two_var);
            }
        }
        total
    }
}

/// K-component isotropic Gaussian mixture `Σ_k w_k N(x; m_k, Λ·I)`.
///
/// Density evaluation drops terms more than about ten kernel widths away
/// from the query.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMessage {
    mx: Vec<f64>,
    my: Vec<f64>,
    weights: Vec<f64>,
    bandwidth: f64,
    index: CellIndex,
}

impl MixtureMessage {
    pub fn new(means: &[Point], mut weights: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(Error::Integrity("mixture needs matching non-empty means and weights".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if means.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::Integrity("mixture means must be finite".into()));
        }
        normalize(&mut weights)?;
        let mx: Vec<f64> = means.iter().map(|p| p.x).collect();
        let my: Vec<f64> = means.iter().map(|p| p.y).collect();
        let index = CellIndex::build(&mx, &my, &weights, bandwidth);
        Ok(MixtureMessage { mx, my, weights, bandwidth, index })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self, k: usize) -> Point {
        Point::new(self.mx[k], self.my[k])
    }

    pub fn means(&self) -> impl Iterator<Item = Point> + Clone + '_ {
        self.mx.iter().zip(&self.my).map(|(&x, &y)| Point::new(x, y))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Kernel variance Λ (m²).
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Mixture density at `x`, clamped below at [`DENSITY_FLOOR`].
    pub fn density(&self, x: Point) -> f64 {
        let inv = 0.5 / self.bandwidth;
        let s = self.index.gauss_sum(x.x, x.y, inv);
        (s / (2.0 * PI * self.bandwidth)).max(DENSITY_FLOOR)
    }

    /// Natural log of the clamped density at each query point.
    pub fn log_density_into(&self, queries: &[Point], out: &mut Vec<f64>) {
        let inv = 0.5 / self.bandwidth;
        let norm = 2.0 * PI * self.bandwidth;
        out.clear();
        out.extend(queries.iter().map(|q| {
            let s = self.index.gauss_sum(q.x, q.y, inv);
            (s / norm).max(DENSITY_FLOOR).ln()
        }));
    }

    /// Draws `n` points from the mixture.
    pub fn sample(&self, n: usize, rng: &mut seed::Rng) -> Vec<Point> {
        let index = WeightedIndex::new(&self.weights).expect("mixture weights are normalized");
        let sd = self.bandwidth.sqrt();
        (0..n)
            .map(|_| {
                let k = index.sample(rng);
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                Point::new(self.mx[k] + sd * nx, self.my[k] + sd * ny)
            })
            .collect()
    }

    /// Weighted covariance of the component means `[sxx, sxy, syy]`.
    pub fn mean_covariance(&self) -> [f64; 3] {
        weighted_covariance(self.means(), &self.weights)
    }
}

/// Systematic resampling of a weighted pool down to `k` equal-weight samples.
pub fn resample(pool: &[(Point, f64)], k: usize, seed: u64) -> Result<ParticleBelief> {
    let (points, weights): (Vec<Point>, Vec<f64>) = pool.iter().copied().unzip();
    let mut rng = seed::rng(seed);
    resample_with(&points, &weights, k, &mut rng)
}

pub(crate) fn resample_with(
    points: &[Point],
    weights: &[f64],
    k: usize,
    rng: &mut seed::Rng,
) -> Result<ParticleBelief> {
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::Integrity("resampling needs a non-empty pool".into()));
    }
    if k == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    let mut w = weights.to_vec();
    normalize(&mut w)?;
    let step = 1.0 / k as f64;
    let u0: f64 = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(k);
    let mut idx = 0;
    let mut cumulative = w[0];
    for j in 0..k {
        let u = u0 + j as f64 * step;
        while u > cumulative && idx + 1 < w.len() {
            idx += 1;
            cumulative += w[idx];
        }
        // skip zero-weight entries the cumulative sum cannot distinguish
        while w[idx] == 0.0 && idx + 1 < w.len() {
            idx += 1;
            cumulative += w[idx];
        }
        out.push(points[idx]);
    }
    Ok(ParticleBelief::equal_weight(out))
}
