//! Monte Carlo experiment harness: presets, batch trials, result files,
//! paired comparisons and single-trial replay.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvfmt::sig9;
use crate::error::{Error, Result};
use crate::graph::{bfs_spanning_tree, build_connectivity, measured_min_spanning_tree};
use crate::hierarchy::{assign_layers, run_hierarchical_nbp, GateMode};
use crate::metrics::{self, CdfCurve, ComplexityModel, ComplexityReport, LinkCount, LinkScope};
use crate::nbp::{run_standard_nbp, run_tree_nbp, NbpOutput, RunConfig};
use crate::scenario::{
    generate_scenario, measure_distances, AnchorLayout, NetworkPreset, NodeId, NoiseModel, ScenarioConfig, Topology,
};
use crate::traffic::IterationTraffic;

pub const DEFAULT_TRIALS: usize = 50;

/// Scenario of a named network: 50 m square, 12 m range, default noise.
/// net1: 13 anchors and 100 agents, net2: 13 and 50, net3: 9 and 100.
pub fn preset(network: NetworkPreset) -> ScenarioConfig {
    let agent_count = match network {
        NetworkPreset::Net1 | NetworkPreset::Net3 => 100,
        NetworkPreset::Net2 => 50,
    };
    ScenarioConfig {
        area_side: 50.0,
        radio_range: 12.0,
        noise: NoiseModel::default(),
        anchors: AnchorLayout::Preset(network),
        agent_count,
        topology: Topology::Square,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Nbp,
    NbpBfs,
    NbpMin,
    Hierarchical,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Nbp, Algorithm::NbpBfs, Algorithm::NbpMin, Algorithm::Hierarchical];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Nbp => "nbp",
            Algorithm::NbpBfs => "nbp-bfs",
            Algorithm::NbpMin => "nbp-min",
            Algorithm::Hierarchical => "hierarchical",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// How agents that could not be localized enter the error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnassignableScoring {
    #[default]
    Exclude,
    /// Scored at the prior mean, the area center.
    PriorMean,
}

impl FromStr for UnassignableScoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(UnassignableScoring::Exclude),
            "prior-mean" => Ok(UnassignableScoring::PriorMean),
            other => Err(Error::Config(format!("unknown scoring '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Preset(NetworkPreset),
    Inline(ScenarioConfig),
}

impl ScenarioSource {
    pub fn resolve(&self) -> ScenarioConfig {
        match self {
            ScenarioSource::Preset(p) => preset(*p),
            ScenarioSource::Inline(c) => c.clone(),
        }
    }
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_k() -> usize {
    200
}
fn default_t() -> usize {
    10
}
fn default_h() -> f64 {
    2.0
}
fn default_workers() -> usize {
    1
}
fn default_cdf_max() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    pub algorithm: Algorithm,
    /// Hierarchical only; defaults to 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_init: Option<u8>,
    #[serde(default)]
    pub gate: GateMode,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub score_unassignable: UnassignableScoring,
    /// The CDF is reported on 0, 0.05, ..., `cdf_max` meters.
    #[serde(default = "default_cdf_max")]
    pub cdf_max: f64,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioSource, algorithm: Algorithm) -> Self {
        ExperimentConfig {
            scenario,
            algorithm,
            threshold_init: None,
            gate: GateMode::Adaptive,
            k: default_k(),
            t: default_t(),
            h: default_h(),
            early_stop: None,
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            workers: 1,
            out_dir: None,
            score_unassignable: UnassignableScoring::Exclude,
            cdf_max: default_cdf_max(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match (self.algorithm, self.threshold_init) {
            (Algorithm::Hierarchical, Some(t)) if t > 3 => {
                return Err(Error::Config(format!("threshold_init must be in 0..=3, got {t}")))
            }
            (Algorithm::Hierarchical, _) => {}
            (other, Some(_)) => {
                return Err(Error::Config(format!("threshold_init only applies to hierarchical, not {other}")))
            }
            (other, None) if self.gate != GateMode::Adaptive => {
                return Err(Error::Config(format!("gate mode only applies to hierarchical, not {other}")))
            }
            _ => {}
        }
        if !(self.cdf_max > 0.0 && self.cdf_max.is_finite()) {
            return Err(Error::Config("cdf_max must be positive".into()));
        }
        self.run_config(0).validate()?;
        self.scenario.resolve().validate()
    }

    pub fn threshold(&self) -> u8 {
        self.threshold_init.unwrap_or(3)
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig { k: self.k, iterations: self.t, h: self.h, seed, early_stop: self.early_stop }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.trials as u64).map(|t| self.base_seed.wrapping_add(t))
    }

    /// Short label such as `hierarchical(3)`.
    pub fn label(&self) -> String {
        match self.algorithm {
            Algorithm::Hierarchical => format!("hierarchical({})", self.threshold()),
            other => other.to_string(),
        }
    }
}

/// Result of one trial. Runtime covers inference only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub scenario_digest: String,
    /// `(agent, error in meters)` for every agent that was localized.
    pub errors: Vec<(NodeId, f64)>,
    /// Agents left at their prior, with the error of the prior mean.
    pub unlocalized: Vec<(NodeId, f64)>,
    pub runtime_s: f64,
    pub messages_total: usize,
    pub links_per_iteration: f64,
    pub iterations: u32,
    pub layers: usize,
    pub degenerate_fusions: usize,
    pub traffic: Vec<(u32, usize, usize)>,
    pub failure: Option<String>,
}

impl TrialRecord {
    /// Errors that enter the statistics under the given scoring rule.
    pub fn scored_errors(&self, scoring: UnassignableScoring) -> Vec<f64> {
        let mut out: Vec<f64> = self.errors.iter().map(|(_, e)| *e).collect();
        if scoring == UnassignableScoring::PriorMean {
            out.extend(self.unlocalized.iter().map(|(_, e)| *e));
        }
        out
    }

    /// Same trial, ignoring wall-clock time.
    pub fn same_outcome(&self, other: &TrialRecord) -> bool {
        TrialRecord { runtime_s: 0.0, ..self.clone() } == TrialRecord { runtime_s: 0.0, ..other.clone() }
    }
}

/// Full inference output of a trial, for callers that need the beliefs.
pub struct TrialRun {
    pub record: TrialRecord,
    pub output: NbpOutput,
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize, seed: u64) -> Result<TrialRun> {
    let sc_cfg = cfg.scenario.resolve();
    let sc = generate_scenario(&sc_cfg, seed)?;
    let graph = build_connectivity(&sc);
    let meas = measure_distances(&sc, &graph, seed)?;
    let run = cfg.run_config(seed);
    let anchors: BTreeSet<NodeId> = sc.anchor_ids().collect();

    let started = Instant::now();
    let (output, layers) = match cfg.algorithm {
        Algorithm::Nbp => (run_standard_nbp(&sc, &graph, &meas, &run)?, 1),
        Algorithm::NbpBfs => {
            let tree = bfs_spanning_tree(&graph, &anchors)?;
            (run_tree_nbp(&sc, &graph, &tree, &meas, &run)?, 1)
        }
        Algorithm::NbpMin => {
            let tree = measured_min_spanning_tree(&graph, &meas)?;
            (run_tree_nbp(&sc, &graph, &tree, &meas, &run)?, 1)
        }
        Algorithm::Hierarchical => {
            let layering = assign_layers(&graph, &anchors, cfg.threshold(), cfg.gate)?;
            let out = run_hierarchical_nbp(&sc, &graph, &meas, &layering, &run)?;
            let l = layering.layer_count();
            (out.into_nbp_output(), l)
        }
    };
    let runtime_s = started.elapsed().as_secs_f64();

    let center = sc_cfg.area_side / 2.0;
    let center = crate::geom::Point::new(center, center);
    let unlocalized_set: BTreeSet<NodeId> = output.unlocalized.iter().copied().collect();
    let mut errors = Vec::new();
    let mut unlocalized = Vec::new();
    for node in &sc.agents {
        if unlocalized_set.contains(&node.id) {
            unlocalized.push((node.id, center.dist(node.position)));
        } else {
            errors.push((node.id, output.estimate(node.id).dist(node.position)));
        }
    }
    let record = TrialRecord {
        trial,
        seed,
        scenario_digest: sc.digest(),
        errors,
        unlocalized,
        runtime_s,
        messages_total: output.log.len(),
        links_per_iteration: metrics::measured_links_in(&output.log, LinkCount::PerIterationMean, LinkScope::All),
        iterations: output.log.iterations(),
        layers,
        degenerate_fusions: output.stats.degenerate_fusions,
        traffic: output
            .log
            .per_iteration()
            .into_iter()
            .map(|IterationTraffic { iteration, directed_messages, links_active }| {
                (iteration, directed_messages, links_active)
            })
            .collect(),
        failure: None,
    };
    Ok(TrialRun { record, output })
}

fn failed_record(trial: usize, seed: u64, err: &Error) -> TrialRecord {
    TrialRecord {
        trial,
        seed,
        scenario_digest: String::new(),
        errors: Vec::new(),
        unlocalized: Vec::new(),
        runtime_s: 0.0,
        messages_total: 0,
        links_per_iteration: 0.0,
        iterations: 0,
        layers: 0,
        degenerate_fusions: 0,
        traffic: Vec::new(),
        failure: Some(err.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub trial: usize,
    pub seed: u64,
    pub scenario_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub scenario: ScenarioConfig,
    pub trials: Vec<ManifestTrial>,
    pub partial: bool,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Sorted by seed.
    pub records: Vec<TrialRecord>,
    pub cdf: CdfCurve,
    pub complexity: ComplexityReport,
    pub scored_agents: usize,
    pub unlocalized_agents: usize,
}

impl ExperimentResult {
    pub fn pooled_errors(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.scored_errors(self.config.score_unassignable)).collect()
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            scenario: self.config.scenario.resolve(),
            trials: self
                .records
                .iter()
                .map(|r| ManifestTrial {
                    trial: r.trial,
                    seed: r.seed,
                    scenario_digest: r.scenario_digest.clone(),
                    failure: r.failure.clone(),
                })
                .collect(),
            partial: self.failures() > 0,
        }
    }

    /// Writes manifest.json, cdf.csv, traffic.csv, trials.csv, errors.csv,
    /// complexity.json and timing.csv. Everything but timing.csv is a pure
    /// function of the config.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())? + "\n")?;
        self.cdf.write_csv(BufWriter::new(File::create(dir.join("cdf.csv"))?))?;
        fs::write(dir.join("complexity.json"), serde_json::to_string_pretty(&self.complexity)? + "\n")?;

        let mut w = BufWriter::new(File::create(dir.join("traffic.csv"))?);
        writeln!(w, "seed,iteration,directed_messages,links_active")?;
        for r in &self.records {
            for (it, msgs, links) in &r.traffic {
                writeln!(w, "{},{},{},{}", r.seed, it, msgs, links)?;
            }
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("trials.csv"))?);
        writeln!(
            w,
            "trial,seed,scenario_digest,localized,unlocalized,median_error_m,q25_error_m,q75_error_m,\
             messages_total,links_per_iteration,iterations,layers,degenerate_fusions,status"
        )?;
        for r in &self.records {
            let q = metrics::error_quantiles(&r.scored_errors(self.config.score_unassignable));
            let fmt_q = |f: fn(&metrics::ErrorQuantiles) -> f64| q.as_ref().map(|q| sig9(f(q))).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.trial,
                r.seed,
                r.scenario_digest,
                r.errors.len(),
                r.unlocalized.len(),
                fmt_q(|q| q.median),
                fmt_q(|q| q.q25),
                fmt_q(|q| q.q75),
                r.messages_total,
                sig9(r.links_per_iteration),
                r.iterations,
                r.layers,
                r.degenerate_fusions,
                r.failure.as_deref().map(csv_escape).unwrap_or_else(|| "ok".into()),
            )?;
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("errors.csv"))?);
        writeln!(w, "seed,node_id,error_m,localized")?;
        for r in &self.records {
            for (id, e) in &r.errors {
                writeln!(w, "{},{},{},true", r.seed, id, sig9(*e))?;
            }
            for (id, e) in &r.unlocalized {
                writeln!(w, "{},{},{},false", r.seed, id, sig9(*e))?;
            }
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("timing.csv"))?);
        writeln!(w, "seed,runtime_s")?;
        for r in &self.records {
            writeln!(w, "{},{}", r.seed, sig9(r.runtime_s))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_escape(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn complexity_model(a: Algorithm) -> ComplexityModel {
    match a {
        Algorithm::Nbp => ComplexityModel::Nbp,
        Algorithm::NbpBfs | Algorithm::NbpMin => ComplexityModel::Bfs,
        Algorithm::Hierarchical => ComplexityModel::Hierarchical,
    }
}

/// Runs every trial (seeds `base_seed + trial`) on `workers` threads and
/// aggregates. Nothing is written; see [`run_experiment`].
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let seeds: Vec<(usize, u64)> = cfg.seeds().enumerate().collect();
    let mut records: Vec<TrialRecord> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&(trial, seed)| match run_trial(cfg, trial, seed) {
                Ok(run) => run.record,
                Err(e) => failed_record(trial, seed, &e),
            })
            .collect()
    });
    records.sort_by_key(|r| r.seed);

    let scored: Vec<f64> = records.iter().flat_map(|r| r.scored_errors(cfg.score_unassignable)).collect();
    let cdf = CdfCurve::from_errors(&scored, &metrics::threshold_grid(cfg.cdf_max, 0.05))?;
    let sc = cfg.scenario.resolve();
    let done: Vec<&TrialRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    let mean = |f: fn(&TrialRecord) -> f64| {
        if done.is_empty() {
            0.0
        } else {
            done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
        }
    };
    let layers: Vec<f64> = done.iter().map(|r| r.layers as f64).collect();
    let l = metrics::median(&layers).unwrap_or(1.0).round().max(1.0) as usize;
    let model = complexity_model(cfg.algorithm);
    let p = sc.radio_range / sc.area_side;
    let complexity = ComplexityReport {
        algorithm: model,
        n: sc.agent_count,
        p,
        l,
        analytic_value: metrics::analytic_complexity(model, sc.agent_count, p, l),
        measured_links: mean(|r| r.links_per_iteration),
    };
    let unlocalized_agents = records.iter().map(|r| r.unlocalized.len()).sum();
    Ok(ExperimentResult {
        config: cfg.clone(),
        scored_agents: scored.len(),
        unlocalized_agents,
        records,
        cdf,
        complexity,
    })
}

/// [`execute`] plus result files in `out_dir` (if set).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let result = execute(cfg)?;
    if let Some(dir) = &cfg.out_dir {
        result.write(dir)?;
    }
    Ok(result)
}

/// Re-runs one trial of a manifest and checks it against the recorded
/// scenario digest.
pub fn replay(manifest: &Manifest, seed: u64) -> Result<TrialRun> {
    let entry = manifest
        .trials
        .iter()
        .find(|t| t.seed == seed)
        .ok_or_else(|| Error::Config(format!("seed {seed} is not part of this experiment")))?;
    let run = run_trial(&manifest.config, entry.trial, seed)?;
    if entry.failure.is_none() && run.record.scenario_digest != entry.scenario_digest {
        return Err(Error::Integrity(format!("scenario for seed {seed} no longer matches the manifest")));
    }
    Ok(run)
}

/// Error thresholds reported by [`compare`].
pub const COMPARE_THRESHOLDS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub median_error_m: Option<f64>,
    /// CDF at each of [`COMPARE_THRESHOLDS`].
    pub cdf: Vec<f64>,
    pub mean_runtime_s: f64,
    pub mean_messages: f64,
    /// Relative to the first row; `None` for the first row itself.
    pub runtime_ratio: Option<f64>,
    pub traffic_ratio: Option<f64>,
}

/// Paired-seed comparison of already executed experiments; the first one
/// is the reference for ratios.
pub fn compare_results(results: &[ExperimentResult]) -> Result<Vec<ComparisonRow>> {
    let Some(first) = results.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    for r in &results[1..] {
        if r.config.scenario != first.config.scenario {
            return Err(Error::Config(format!("{} uses a different scenario", r.config.label())));
        }
        let seeds = |x: &ExperimentResult| x.records.iter().map(|t| t.seed).collect::<Vec<_>>();
        if seeds(r) != seeds(first) {
            return Err(Error::Config(format!("{} uses different seeds", r.config.label())));
        }
        for (a, b) in r.records.iter().zip(&first.records) {
            if a.failure.is_none() && b.failure.is_none() && a.scenario_digest != b.scenario_digest {
                return Err(Error::Integrity(format!("scenario mismatch for seed {}", a.seed)));
            }
        }
    }
    let mean = |res: &ExperimentResult, f: fn(&TrialRecord) -> f64| {
        let v: Vec<f64> = res.records.iter().filter(|r| r.failure.is_none()).map(f).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let base_runtime = mean(first, |r| r.runtime_s);
    let base_traffic = mean(first, |r| r.messages_total as f64);
    results
        .iter()
        .enumerate()
        .map(|(k, res)| {
            let errors = res.pooled_errors();
            let runtime = mean(res, |r| r.runtime_s);
            let traffic = mean(res, |r| r.messages_total as f64);
            Ok(ComparisonRow {
                label: res.config.label(),
                median_error_m: metrics::median(&errors),
                cdf: CdfCurve::from_errors(&errors, &COMPARE_THRESHOLDS)?.values,
                mean_runtime_s: runtime,
                mean_messages: traffic,
                runtime_ratio: (k > 0).then(|| runtime / base_runtime),
                traffic_ratio: (k > 0).then(|| traffic / base_traffic),
            })
        })
        .collect()
}

pub fn compare(configs: &[ExperimentConfig]) -> Result<Vec<ComparisonRow>> {
    if let Some(first) = configs.first() {
        if let Some(bad) = configs.iter().find(|c| c.scenario != first.scenario) {
            return Err(Error::Config(format!("{} uses a different scenario", bad.label())));
        }
        if let Some(bad) = configs.iter().find(|c| c.base_seed != first.base_seed || c.trials != first.trials) {
            return Err(Error::Config(format!("{} uses different seeds", bad.label())));
        }
    }
    let results = configs.iter().map(execute).collect::<Result<Vec<_>>>()?;
    compare_results(&results)
}

/// `algorithm,median_error_m,cdf_0.5m,cdf_1m,cdf_2m,mean_runtime_s,mean_messages,runtime_ratio,traffic_ratio`
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "algorithm,median_error_m,cdf_0.5m,cdf_1m,cdf_2m,mean_runtime_s,mean_messages,runtime_ratio,traffic_ratio"
    )?;
    let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label,
            opt(r.median_error_m),
            r.cdf.iter().map(|v| sig9(*v)).collect::<Vec<_>>().join(","),
            sig9(r.mean_runtime_s),
            sig9(r.mean_messages),
            opt(r.runtime_ratio),
            opt(r.traffic_ratio),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> ExperimentConfig {
        let mut sc = preset(NetworkPreset::Net2);
        sc.agent_count = 12;
        ExperimentConfig { k: 30, t: 2, trials: 2, ..ExperimentConfig::new(ScenarioSource::Inline(sc), algorithm) }
    }

    #[test]
    fn presets() {
        let n1 = preset(NetworkPreset::Net1);
        assert_eq!((n1.agent_count, crate::scenario::anchor_layout(&n1.anchors, 50.0).len()), (100, 13));
        let n2 = preset(NetworkPreset::Net2);
        assert_eq!((n2.agent_count, crate::scenario::anchor_layout(&n2.anchors, 50.0).len()), (50, 13));
        let n3 = preset(NetworkPreset::Net3);
        assert_eq!((n3.agent_count, crate::scenario::anchor_layout(&n3.anchors, 50.0).len()), (100, 9));
        for c in [n1, n2, n3] {
            assert_eq!((c.area_side, c.radio_range), (50.0, 12.0));
            assert_eq!(c.noise, NoiseModel { sigma0: 0.2, k_sigma: 0.01 });
        }
        let d = ExperimentConfig::new(ScenarioSource::Preset(NetworkPreset::Net1), Algorithm::Nbp);
        assert_eq!((d.k, d.t, d.h), (200, 10, 2.0));
    }

    #[test]
    fn threshold_only_for_hierarchical() {
        let mut cfg = small(Algorithm::NbpBfs);
        cfg.threshold_init = Some(2);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small(Algorithm::Hierarchical);
        cfg.threshold_init = Some(2);
        assert!(cfg.validate().is_ok());
        cfg.threshold_init = Some(4);
        assert!(cfg.validate().is_err());
        cfg.threshold_init = None;
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = "scenario = \"net1\"\nalgorithm = \"hierarchical\"\nthreshold_init = 3\ntrials = 5\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.scenario, ScenarioSource::Preset(NetworkPreset::Net1));
        assert_eq!(cfg.k, 200);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml("scenario = \"net9\"\nalgorithm = \"nbp\"\n").is_err());
        assert!(ExperimentConfig::from_toml("scenario = \"net1\"\nalgorithm = \"nbp\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn every_algorithm_runs() {
        for a in Algorithm::ALL {
            let res = execute(&small(a)).unwrap();
            assert_eq!(res.records.len(), 2);
            assert_eq!(res.failures(), 0, "{a}");
            for r in &res.records {
                assert_eq!(r.errors.len() + r.unlocalized.len(), 12);
            }
            assert!(res.cdf.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn manifest_round_trip_and_replay() {
        let res = execute(&small(Algorithm::Hierarchical)).unwrap();
        let m = res.manifest();
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let seed = res.records[1].seed;
        let again = replay(&back, seed).unwrap();
        assert!(again.record.same_outcome(&res.records[1]));
        assert!(replay(&back, 999).is_err());
    }

    #[test]
    fn output_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(Algorithm::Nbp);
        cfg.trials = 1;
        for sub in ["a", "b"] {
            cfg.out_dir = Some(dir.path().join(sub));
            run_experiment(&cfg).unwrap();
        }
        for f in ["cdf.csv", "traffic.csv", "trials.csv", "errors.csv", "complexity.json"] {
            let a = fs::read(dir.path().join("a").join(f)).unwrap();
            let b = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        assert!(dir.path().join("a/manifest.json").exists());
        assert!(dir.path().join("a/timing.csv").exists());
    }

    #[test]
    fn comparison_table() {
        let one = compare(&[small(Algorithm::Nbp)]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].runtime_ratio, None);

        let rows = compare(&Algorithm::ALL.map(small)).unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["nbp", "nbp-bfs", "nbp-min", "hierarchical(3)"]);
        assert!(rows[1].traffic_ratio.unwrap() < 1.0);

        let mut other = small(Algorithm::Nbp);
        other.scenario = ScenarioSource::Preset(NetworkPreset::Net3);
        assert!(matches!(compare(&[small(Algorithm::Nbp), other]), Err(Error::Config(_))));
    }
}
