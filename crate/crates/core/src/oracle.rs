//! Flow oracle for branch roots: every reported root must be realised by a
//! trajectory, and no shot towards the point may arrive along anything else.

use serde::Serialize;

use crate::classify::{classify_point, sphere_directions, ClassificationReport, ClassifyError};
use crate::flow::{launch_branch, rho_diagnostic, shoot_arrival, Direction, FlowOptions};
use crate::potential::ConicalPotential;
use crate::scalar::{norm, sub};

/// Relative tolerance for matching a flow-measured `rho` to a root.
pub const RECOVERY_TOL: f64 = 0.02;
pub const SWEEP_DIRECTIONS: usize = 64;
const SHOT_RADIUS: f64 = 1e-3;
const SEED_TAU: f64 = 1e-2;

#[derive(Clone, Debug, Serialize)]
pub struct BranchCheck {
    pub root: Vec<f64>,
    pub residual: f64,
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepArrival {
    pub direction: Vec<f64>,
    pub rho_limit: Vec<f64>,
    /// Relative distance to the nearest reported root (infinite when there is none).
    pub nearest_rel: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Adjudication {
    pub name: String,
    pub report: ClassificationReport<f64>,
    pub branches: Vec<BranchCheck>,
    pub shots: usize,
    pub arrivals: Vec<SweepArrival>,
    pub max_residual: f64,
    /// All branches recovered and every arrival near some root.
    pub consistent: bool,
}

impl Adjudication {
    pub fn roots(&self) -> &[Vec<f64>] {
        &self.report.roots.nonzero_roots
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b).max(1e-300)
}

fn seeded(pot: &ConicalPotential, sigma: &[f64], root: &[f64], dir: Direction) -> Option<Vec<f64>> {
    let opts = FlowOptions { dt: SEED_TAU / 50.0, ..FlowOptions::default() };
    let traj = launch_branch(pot, sigma, root, dir, SEED_TAU, 8.0 * SEED_TAU, &opts).ok()?;
    let ev = traj.events.first()?;
    let w = match dir {
        Direction::Forward => (SEED_TAU, 4.0 * SEED_TAU),
        Direction::Backward => (-4.0 * SEED_TAU, -SEED_TAU),
    };
    Some(rho_diagnostic(pot, &traj, ev, w).ok()?.limit)
}

/// Classifies `sigma`, relaunches every nonzero root in both time directions and
/// shoots at `sigma` from [`SWEEP_DIRECTIONS`] normal directions and along each root.
pub fn adjudicate(name: &str, pot: &ConicalPotential, sigma: &[f64]) -> Result<Adjudication, ClassifyError> {
    let report = classify_point(pot, sigma)?;
    let geom = &report.geometry;
    let roots = &report.roots.nonzero_roots;
    let mut max_residual = 0.0_f64;
    let mut branches = Vec::new();
    for root in roots {
        let residual = geom.branch_residual(root);
        max_residual = max_residual.max(residual);
        let nan = vec![f64::NAN; root.len()];
        let forward = seeded(pot, sigma, root, Direction::Forward).unwrap_or_else(|| nan.clone());
        let backward = seeded(pot, sigma, root, Direction::Backward).unwrap_or(nan);
        let e = rel(&forward, root).max(rel(&backward, root));
        branches.push(BranchCheck { root: root.clone(), residual, forward, backward, rel_error: e });
    }
    if let Some(m) = &report.roots.root_manifold_samples {
        for s in m {
            max_residual = max_residual.max(geom.branch_residual(s));
        }
    }

    let p = geom.codim();
    let count = if p == 1 { 2 } else { SWEEP_DIRECTIONS };
    let mut arrivals = Vec::new();
    let mut shots = 0;
    // The sphere sweep, plus one shot straight down each reported root.
    let mut dirs: Vec<Vec<f64>> = sphere_directions::<f64>(p, count).iter().map(|w| geom.apply_grad_g_t(w)).collect();
    dirs.extend(roots.iter().cloned());
    for u in dirs {
        let n = norm(&u);
        let u: Vec<f64> = u.iter().map(|v| v / n).collect();
        shots += 1;
        if let Some(a) = shoot_arrival(pot, sigma, &u, SHOT_RADIUS) {
            let rho = a.diagnostic.limit;
            let nearest_rel = roots.iter().map(|r| rel(&rho, r)).fold(f64::INFINITY, f64::min);
            arrivals.push(SweepArrival { direction: u, rho_limit: rho, nearest_rel });
        }
    }
    let consistent = branches.iter().all(|b| b.rel_error <= RECOVERY_TOL)
        && arrivals.iter().all(|a| a.nearest_rel <= RECOVERY_TOL);
    Ok(Adjudication { name: name.to_string(), report, branches, shots, arrivals, max_residual, consistent })
}
