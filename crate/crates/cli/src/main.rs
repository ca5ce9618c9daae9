use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hnbp::csvfmt::sig9;
use hnbp::experiment::{self, Algorithm, ExperimentConfig, Manifest, ScenarioSource, UnassignableScoring};
use hnbp::scenario::NetworkPreset;

#[derive(Parser)]
#[command(name = "hnbp", version, about = "Cooperative localization experiments with NBP and layered NBP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write its result files.
    Run(RunArgs),
    /// Print an experiment config for a preset network as TOML.
    Preset {
        network: NetworkPreset,
        #[arg(long, default_value = "hierarchical")]
        algorithm: Algorithm,
    },
    /// Run several algorithms on the same seeds and print a comparison table.
    Compare(CompareArgs),
    /// Re-run one trial of a finished experiment.
    Replay {
        /// Experiment directory or its manifest.json.
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

/// Settings shared by `run` and `compare`. Flags override the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset network used when no config file is given.
    #[arg(long, default_value = "net1")]
    preset: NetworkPreset,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    score_unassignable: Option<UnassignableScoring>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    threshold_init: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Overrides,
    /// Algorithms to compare; the first is the reference for ratios.
    #[arg(long, value_delimiter = ',', default_values_t = [Algorithm::Nbp, Algorithm::Hierarchical])]
    algorithm: Vec<Algorithm>,
    /// Applies to the hierarchical entry.
    #[arg(long)]
    threshold_init: Option<u8>,
    /// Write the table as CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn base(&self, algorithm: Option<Algorithm>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::new(
                ScenarioSource::Preset(self.preset),
                algorithm.unwrap_or(Algorithm::Hierarchical),
            ),
        };
        if let Some(a) = algorithm {
            if a != cfg.algorithm {
                cfg.algorithm = a;
                if a != Algorithm::Hierarchical {
                    cfg.threshold_init = None;
                    cfg.gate = Default::default();
                }
            }
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.score_unassignable {
            cfg.score_unassignable = s;
        }
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.common.base(args.algorithm)?;
    if args.threshold_init.is_some() {
        cfg.threshold_init = args.threshold_init;
    }
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    if cfg.out_dir.is_none() {
        bail!("no output directory: pass --out or set out_dir in the config");
    }
    cfg.validate()?;
    let result = experiment::run_experiment(&cfg)?;
    let errors = result.pooled_errors();
    let median = hnbp::metrics::median(&errors).map(sig9).unwrap_or_else(|| "n/a".into());
    println!(
        "{}: {} trials, {} scored agents, median error {} m, CDF(1 m) {}, {} failed",
        cfg.label(),
        result.records.len(),
        result.scored_agents,
        median,
        sig9(result.cdf.at(1.0).unwrap_or(0.0)),
        result.failures(),
    );
    if let Some(dir) = &cfg.out_dir {
        println!("results in {}", dir.display());
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    if args.algorithm.is_empty() {
        bail!("no algorithms to compare");
    }
    let configs = args
        .algorithm
        .iter()
        .map(|&a| {
            let mut cfg = args.common.base(Some(a))?;
            if a == Algorithm::Hierarchical && args.threshold_init.is_some() {
                cfg.threshold_init = args.threshold_init;
            }
            cfg.out_dir = None;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = experiment::compare(&configs)?;
    match args.out {
        Some(path) => {
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            experiment::write_comparison_csv(&rows, io::BufWriter::new(file))?;
        }
        None => experiment::write_comparison_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn replay(path: PathBuf, seed: u64) -> Result<()> {
    let path = if path.is_dir() { path.join("manifest.json") } else { path };
    let manifest = Manifest::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let run = experiment::replay(&manifest, seed)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&run.record)?)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Preset { network, algorithm } => {
            let cfg = ExperimentConfig::new(ScenarioSource::Preset(network), algorithm);
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Compare(args) => compare(args),
        Command::Replay { manifest, seed } => replay(manifest, seed),
    }
}
