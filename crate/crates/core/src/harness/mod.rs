//! Experiment drivers, result records and their persistence.
//!
//! A run produces metric rows (each tagged with its `eps` and `t`), free-form
//! events and a list of rule outcomes. Rules are evaluated from the metric rows
//! and the thresholds alone, so a stored run can be re-judged by [`report`].

mod config;
mod experiments;
mod rules;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    ExperimentConfig, ExperimentId, GridConfig, PotentialSource, Resolved, SchemeParams, DEFAULT_DT_OVER_EPS,
};
pub use experiments::TRACK_TIMES;
pub use rules::{evaluate, loglog_slope};

use crate::classify::ClassifyError;
use crate::flow::FlowError;
use crate::quantum::QuantumError;
use crate::wavepacket::WavepacketError;
use crate::wigner::WignerError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const RECORD_FILE: &str = "record.json";
pub const PEAKS_FILE: &str = "peaks.csv";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Wavepacket(#[from] WavepacketError),
    #[error(transparent)]
    Wigner(#[from] WignerError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// One scalar measurement. `label` names the case within the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub eps: f64,
    pub t: f64,
    pub name: String,
    pub label: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(eps: f64, t: f64, name: &str, label: &str, value: f64) -> Self {
        Self { eps, t, name: name.to_string(), label: label.to_string(), value }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub eps: Option<f64>,
    pub t: Option<f64>,
    pub kind: String,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: String,
    pub passed: bool,
    /// The measured quantity the rule compares (worst case over its rows).
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: ExperimentId,
    pub config: Resolved,
    pub config_hash: String,
    pub code_version: String,
    pub rules: Vec<RuleOutcome>,
    pub passed: bool,
    /// Wall time per job in seconds (`eps` as key; `all` for the whole run).
    pub runtime_s: Vec<(String, f64)>,
    /// Files written next to the record besides the three fixed ones.
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub files: Vec<(String, String)>,
    #[serde(skip)]
    pub metrics: Vec<MetricRow>,
    #[serde(skip)]
    pub events: Vec<Event>,
}

/// Measured Wigner peak, exported for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub eps: f64,
    pub t: f64,
    pub label: String,
    pub x: f64,
    pub xi: f64,
    pub mass: f64,
}

/// Metrics and events gathered by an experiment driver.
#[derive(Default)]
pub(crate) struct Collector {
    pub metrics: Vec<MetricRow>,
    pub events: Vec<Event>,
    pub runtime: Vec<(String, f64)>,
    pub peaks: Vec<PeakRow>,
    /// Extra exports (trajectories, Wigner snapshots) by file name.
    pub files: Vec<(String, String)>,
}

impl Collector {
    pub fn peak(&mut self, eps: f64, t: f64, label: &str, p: &crate::wigner::Peak) {
        self.peaks.push(PeakRow { eps, t, label: label.to_string(), x: p.x, xi: p.xi, mass: p.mass });
    }

    /// Adds an export; a later file with the same name replaces the earlier one.
    pub fn file(&mut self, name: String, text: String) {
        self.files.retain(|(n, _)| *n != name);
        self.files.push((name, text));
    }

    pub fn push(&mut self, eps: f64, t: f64, name: &str, label: &str, value: f64) {
        self.metrics.push(MetricRow::new(eps, t, name, label, value));
    }

    pub fn event(&mut self, eps: Option<f64>, t: Option<f64>, kind: &str, detail: serde_json::Value) {
        self.events.push(Event { eps, t, kind: kind.to_string(), detail });
    }

    /// Runs `job` and records its wall time under `key`.
    pub fn timed<R>(&mut self, key: String, job: impl FnOnce(&mut Self) -> R) -> R {
        let start = Instant::now();
        let out = job(self);
        self.runtime.push((key, start.elapsed().as_secs_f64()));
        out
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<ResultRecord, HarnessError> {
    run_resolved(&cfg.resolve()?)
}

pub fn run_resolved(cfg: &Resolved) -> Result<ResultRecord, HarnessError> {
    let start = Instant::now();
    let mut c = Collector::default();
    match cfg.experiment {
        ExperimentId::Rebound => experiments::rebound(cfg, &mut c)?,
        ExperimentId::Crossing => experiments::crossing(cfg, &mut c)?,
        ExperimentId::SmoothTransport => experiments::smooth_transport(cfg, &mut c)?,
        ExperimentId::StaticCone => experiments::static_cone(cfg, &mut c)?,
        ExperimentId::ClassifySuite => experiments::classify_suite(cfg, &mut c)?,
        ExperimentId::PacketConvergence => experiments::packet_convergence(cfg, &mut c)?,
    }
    c.runtime.push(("all".to_string(), start.elapsed().as_secs_f64()));
    if !c.peaks.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &c.peaks {
            w.serialize(p).expect("peak rows serialize");
        }
        let text = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8");
        c.file(PEAKS_FILE.to_string(), text);
    }
    let rules = evaluate(cfg.experiment, &c.metrics, &cfg.thresholds);
    Ok(ResultRecord {
        experiment: cfg.experiment,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        passed: rules.iter().all(|r| r.passed),
        rules,
        runtime_s: c.runtime,
        artifacts: c.files.iter().map(|(n, _)| n.clone()).collect(),
        files: c.files,
        metrics: c.metrics,
        events: c.events,
    })
}

fn io(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("metric rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricRow>, HarnessError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| HarnessError::Io(format!("{METRICS_FILE}: {e}")))
}

impl ResultRecord {
    /// Writes `metrics.csv`, `events.json` and `record.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| io(&p, e))
        };
        put(METRICS_FILE, metrics_to_csv(&self.metrics))?;
        put(EVENTS_FILE, serde_json::to_string_pretty(&self.events).expect("events serialize"))?;
        for (name, text) in &self.files {
            put(name, text.clone())?;
        }
        put(RECORD_FILE, serde_json::to_string_pretty(self).expect("record serializes"))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let get = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| io(&p, e))
        };
        let mut rec: ResultRecord =
            serde_json::from_str(&get(RECORD_FILE)?).map_err(|e| HarnessError::Io(format!("{RECORD_FILE}: {e}")))?;
        rec.metrics = metrics_from_csv(&get(METRICS_FILE)?)?;
        rec.events = serde_json::from_str(&get(EVENTS_FILE)?).map_err(|e| HarnessError::Io(format!("{EVENTS_FILE}: {e}")))?;
        Ok(rec)
    }
}

/// Outcome of re-judging a stored run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub rules: Vec<RuleOutcome>,
    /// Recomputed outcomes agree with the stored ones.
    pub consistent: bool,
    pub passed: bool,
}

/// Reads a run directory and re-evaluates its rules from the persisted metrics.
pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    let rec = ResultRecord::read(dir)?;
    let rules = evaluate(rec.experiment, &rec.metrics, &rec.config.thresholds);
    let same = |a: &RuleOutcome, b: &RuleOutcome| a.rule == b.rule && a.passed == b.passed;
    let consistent = rules.len() == rec.rules.len() && rules.iter().zip(&rec.rules).all(|(a, b)| same(a, b));
    let hash_ok = rec.config.hash() == rec.config_hash;
    Ok(Report {
        experiment: rec.experiment,
        config_hash: rec.config_hash,
        passed: rules.iter().all(|r| r.passed),
        consistent: consistent && hash_ok,
        rules,
    })
}
