//! Semiclassical and classical dynamics under conical potentials
//! `V(x) = V_S(x) + |g(x)| F(x)`.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the experiment harness uses.

pub mod catalog;
pub mod classify;
pub mod expr;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod potential;
pub mod quantum;
pub mod scalar;
pub mod wavepacket;
pub mod wigner;

pub use expr::{Expr, ScalarField};
pub use potential::{ConicalPotential, PotentialDoc, PotentialError};

pub type Geometry = potential::SingularGeometry<f64>;
pub type PhasePoint = flow::PhasePoint<f64>;
pub type Trajectory = flow::Trajectory<f64>;
pub type WaveFunction = quantum::WaveFunction<f64>;
pub type Propagator = quantum::Propagator<f64>;
pub type ClassificationReport = classify::ClassificationReport<f64>;
pub type BranchRoots = classify::BranchRoots<f64>;
