use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use conelab::classify::{classify_point, classify_sweep};
use conelab::harness::{self, ExperimentConfig};
use conelab::{ConicalPotential, PotentialDoc};
use serde_json::Value;

/// Grid used by `classify --sweep`: points per axis over [-1, 1]^d.
const SWEEP_HALF_WIDTH: f64 = 1.0;
const SWEEP_PER_AXIS: usize = 9;

#[derive(Parser)]
#[command(name = "conelab", version, about = "Conical-potential experiments and classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment; exits non-zero if any acceptance rule fails.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify a point of the singular set and print the report as JSON.
    Classify {
        potential: PathBuf,
        /// Classify the projections of a grid of points instead.
        #[arg(long)]
        sweep: bool,
    },
    /// Re-evaluate the rules of a stored run.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Classify { potential, sweep } => classify(&potential, sweep),
        Command::Report { dir } => report(&dir),
    }
}

fn run(path: &Path, out: Option<PathBuf>) -> Result<bool> {
    let cfg = ExperimentConfig::load(path)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.experiment.name()));
    let rec = harness::run(&cfg)?;
    rec.write(&dir)?;
    for r in &rec.rules {
        println!("{} {:<32} value={:<12.4e} threshold={:.4e}  {}", if r.passed { "PASS" } else { "FAIL" }, r.rule, r.value, r.threshold, r.detail);
    }
    let total = rec.runtime_s.iter().find(|(k, _)| k == "all").map_or(0.0, |(_, s)| *s);
    println!("{}: {} in {total:.2}s, results in {}", rec.experiment, if rec.passed { "passed" } else { "FAILED" }, dir.display());
    Ok(rec.passed)
}

/// Accepts a bare potential document, or `{"potential": {...}, "sigma": [...]}`.
fn read_potential(path: &Path) -> Result<(ConicalPotential, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (doc, sigma) = match v.get_mut("potential") {
        Some(p) => {
            let doc: PotentialDoc = serde_json::from_value(p.take())?;
            let sigma = v.get("sigma").map(|s| serde_json::from_value::<Vec<f64>>(s.clone())).transpose()?;
            (doc, sigma)
        }
        None => (serde_json::from_value(v)?, None),
    };
    Ok((ConicalPotential::from_doc(doc)?, sigma))
}

fn classify(path: &Path, sweep: bool) -> Result<bool> {
    let (pot, sigma) = read_potential(path)?;
    let out = if sweep {
        let reports: Vec<Value> = classify_sweep(&pot, SWEEP_HALF_WIDTH, SWEEP_PER_AXIS)
            .into_iter()
            .map(|r| match r {
                Ok(rep) => serde_json::to_value(rep).expect("report serializes"),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            })
            .collect();
        Value::Array(reports)
    } else {
        let sigma = match sigma {
            Some(s) => s,
            None => pot
                .project_to_singular_set(&vec![0.0; pot.dim()])
                .ok_or_else(|| anyhow!("cannot project the origin onto the singular set; give \"sigma\""))?,
        };
        if sigma.len() != pot.dim() {
            bail!("sigma has {} components, potential is {}-dimensional", sigma.len(), pot.dim());
        }
        serde_json::to_value(classify_point(&pot, &sigma)?)?
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(true)
}

fn report(dir: &Path) -> Result<bool> {
    let rep = harness::report(dir)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    if !rep.consistent {
        eprintln!("warning: stored outcomes or config hash differ from the recomputed ones");
    }
    Ok(rep.passed && rep.consistent)
}
