use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::potential::{ConicalPotential, PotentialDoc};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Rebound,
    Crossing,
    SmoothTransport,
    StaticCone,
    ClassifySuite,
    PacketConvergence,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Rebound,
        ExperimentId::Crossing,
        ExperimentId::SmoothTransport,
        ExperimentId::StaticCone,
        ExperimentId::ClassifySuite,
        ExperimentId::PacketConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Rebound => "rebound",
            ExperimentId::Crossing => "crossing",
            ExperimentId::SmoothTransport => "smooth_transport",
            ExperimentId::StaticCone => "static_cone",
            ExperimentId::ClassifySuite => "classify_suite",
            ExperimentId::PacketConvergence => "packet_convergence",
        }
    }

    fn default_eps(self) -> Vec<f64> {
        match self {
            ExperimentId::SmoothTransport => vec![1.0 / 256.0],
            ExperimentId::ClassifySuite => vec![],
            _ => vec![1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0],
        }
    }

    /// The rebound pieces carry the momentum spread of the cut, so they need room.
    fn default_grid(self) -> GridConfig {
        let half_width = if self == ExperimentId::Rebound { 8.0 } else { 4.0 };
        GridConfig { half_width, n: 8192 }
    }

    fn default_horizon(self) -> f64 {
        match self {
            ExperimentId::SmoothTransport => 2.0,
            _ => 1.0,
        }
    }

    /// Acceptance thresholds; every entry can be overridden from the config.
    pub fn default_thresholds(self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            ExperimentId::Rebound => &[
                ("weight_tol", 0.05),
                ("weight_tol_even", 0.03),
                ("wigner_weight_tol", 0.02),
                ("track_sqrt_eps", 5.0),
                ("track_min_weight", 0.1),
            ],
            ExperimentId::Crossing => &[("track_sqrt_eps", 5.0), ("side_mass", 0.9), ("track_window", 0.75)],
            ExperimentId::SmoothTransport => &[("track_sqrt_eps", 5.0), ("coherent_error", 1e-3), ("flow_error", 1e-8)],
            ExperimentId::StaticCone => &[("parity_tol", 1e-8), ("nu_tol", 1e-6)],
            ExperimentId::ClassifySuite => &[("residual_tol", 1e-10), ("golden_tol", 1e-10), ("recovery_tol", 0.02)],
            ExperimentId::PacketConvergence => &[("slope", 0.5), ("slope_tol", 0.15), ("floor_factor", 10.0)],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n: usize,
}


/// Crossing and rebound parameters. Unset fields take experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeParams {
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub k: Option<u32>,
    pub eta: Option<f64>,
    /// Profile cut width for the rebound decomposition.
    pub delta: Option<f64>,
}

/// Potential given inline or as a path relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSource {
    Inline(PotentialDoc),
    File(PathBuf),
}

/// Experiment configuration as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    /// Time step in units of eps.
    #[serde(default)]
    pub dt_over_eps: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub potential: Option<PotentialSource>,
    #[serde(default)]
    pub scheme: SchemeParams,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
}

pub const DEFAULT_DT_OVER_EPS: f64 = 0.125;

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            eps: Vec::new(),
            grid: None,
            dt_over_eps: None,
            horizon: None,
            potential: None,
            scheme: SchemeParams::default(),
            output_dir: None,
            seed: 0,
            thresholds: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative paths are taken from the config's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(PotentialSource::File(p)) = &mut cfg.potential {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = &mut cfg.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    /// Fills defaults, reads referenced files and checks the experiment's constraints.
    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        let id = self.experiment;
        let bad = |m: String| Err(HarnessError::Config(m));
        let eps = if self.eps.is_empty() { id.default_eps() } else { self.eps.clone() };
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return bad(format!("eps = {e} outside (0, 1]"));
        }
        let dt_over_eps = self.dt_over_eps.unwrap_or(DEFAULT_DT_OVER_EPS);
        if !(dt_over_eps > 0.0 && dt_over_eps <= 1.0) {
            return bad(format!("dt_over_eps = {dt_over_eps} outside (0, 1]"));
        }
        let horizon = self.horizon.unwrap_or(id.default_horizon());
        if !(horizon > 0.0 && horizon.is_finite()) {
            return bad(format!("horizon = {horizon} must be positive"));
        }
        let grid = self.grid.unwrap_or(id.default_grid());
        if grid.n < 64 || !grid.n.is_power_of_two() || !(grid.half_width > 0.0) {
            return bad(format!("grid n = {} must be a power of two >= 64 with positive half-width", grid.n));
        }
        let potential = match &self.potential {
            None => None,
            Some(PotentialSource::Inline(doc)) => Some(doc.clone()),
            Some(PotentialSource::File(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
                Some(serde_json::from_str::<PotentialDoc>(&text).map_err(|e| HarnessError::Config(e.to_string()))?)
            }
        };
        if let Some(doc) = &potential {
            let pot = ConicalPotential::from_doc(doc.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
            if pot.dim() != 1 && id != ExperimentId::ClassifySuite {
                return bad("quantum experiments run in one dimension".into());
            }
        }
        let s = &self.scheme;
        // The crossing experiment's beta drives its shrinking-eta trend case.
        let beta = s.beta.unwrap_or(if id == ExperimentId::Crossing { 0.05 } else { 0.0 });
        if id == ExperimentId::Crossing && !(0.0..0.1).contains(&beta) {
            return bad(format!("crossing needs beta in [0, 0.1), got {beta}"));
        }
        let eta = s.eta.unwrap_or(-0.5);
        if id == ExperimentId::Crossing && eta == 0.0 {
            return bad("crossing needs eta != 0".into());
        }
        let delta = s.delta.unwrap_or(0.1);
        if !(delta > 0.0 && delta < 1.0) {
            return bad(format!("delta = {delta} outside (0, 1)"));
        }
        let mut thresholds = id.default_thresholds();
        for (k, v) in &self.thresholds {
            if !thresholds.contains_key(k) {
                return bad(format!("unknown threshold '{k}' for {id}"));
            }
            thresholds.insert(k.clone(), *v);
        }
        Ok(Resolved {
            experiment: id,
            eps,
            grid,
            dt_over_eps,
            horizon,
            potential,
            beta,
            alpha: s.alpha.unwrap_or(crate::wavepacket::DEFAULT_ALPHA),
            k: s.k,
            eta,
            delta,
            seed: self.seed,
            thresholds,
        })
    }
}

/// Configuration with every default filled in. Its JSON form is what gets hashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub experiment: ExperimentId,
    pub eps: Vec<f64>,
    pub grid: GridConfig,
    pub dt_over_eps: f64,
    pub horizon: f64,
    pub potential: Option<PotentialDoc>,
    pub beta: f64,
    pub alpha: f64,
    pub k: Option<u32>,
    pub eta: f64,
    pub delta: f64,
    pub seed: u64,
    pub thresholds: BTreeMap<String, f64>,
}

impl Resolved {
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn threshold(&self, name: &str) -> f64 {
        self.thresholds[name]
    }

    pub fn potential_or(&self, fallback: ConicalPotential) -> ConicalPotential {
        match &self.potential {
            Some(doc) => ConicalPotential::from_doc(doc.clone()).expect("validated in resolve"),
            None => fallback,
        }
    }
}
