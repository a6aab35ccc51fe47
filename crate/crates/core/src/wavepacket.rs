//! Wave packets `eps^{-d/4} v_t((x - x(t))/sqrt eps) exp(i[xi(t).(x - x(t)) + S(t)]/eps)`
//! riding a classical trajectory, and the two-sided scheme that lets a packet
//! cross the apex of `V = -|x|`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::Trajectory;
use crate::potential::ConicalPotential;
use crate::quantum::{init_concentrated_state, GridSpec, Profile, Propagator, QuantumError, WaveFunction};
use crate::scalar::{to_f64_vec, Real};

/// Profile `v_t(y)` on an eps-independent grid. The `eps` field is always 1.
pub type PacketProfile<T> = WaveFunction<T>;

pub const PROFILE_HALF_WIDTH: f64 = 32.0;
pub const PROFILE_POINTS: usize = 4096;
pub const DEFAULT_ALPHA: f64 = 0.3;
pub const MAX_K: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WavepacketError {
    #[error("Hessian undefined at t = {0}: the trajectory touches the singular set")]
    HessianUndefined(f64),
    #[error("trajectory does not cover t = {0}")]
    OutOfRange(f64),
    #[error("no k <= 64 satisfies k/2 - (k+1) alpha - (2k+3) beta > 0 (alpha = {alpha}, beta = {beta})")]
    SchemeInfeasible { alpha: f64, beta: f64 },
    #[error("invalid crossing scheme: {0}")]
    BadScheme(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Default profile grid: `[-32, 32)` with 4096 points in 1-D, 256 per axis in 2-D.
pub fn profile_grid(d: usize) -> GridSpec {
    match d {
        1 => GridSpec::line(PROFILE_HALF_WIDTH, PROFILE_POINTS).expect("valid grid"),
        _ => GridSpec::new(2, PROFILE_HALF_WIDTH / 2.0, 256).expect("valid grid"),
    }
}

/// Normalized `a` sampled on a profile grid.
pub fn initial_profile<T: Real>(grid: GridSpec, a: &Profile) -> Result<PacketProfile<T>, WavepacketError> {
    let zero = vec![0.0; grid.d];
    Ok(init_concentrated_state(grid, 1.0, a, &zero, &zero)?)
}

/// Anything that can be evaluated as a profile `v(y)`.
pub trait Envelope {
    fn at(&self, y: &[f64]) -> Complex<f64>;
    /// `L^2` norm the assembled packet is scaled to.
    fn norm_l2(&self) -> f64;
}

impl Envelope for Profile {
    fn at(&self, y: &[f64]) -> Complex<f64> {
        self.eval(y)
    }

    fn norm_l2(&self) -> f64 {
        1.0
    }
}

fn lagrange6(u: f64) -> [f64; 6] {
    let mut w = [0.0; 6];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for m in 0..6 {
            if m != k {
                p *= (u - (m as f64 - 2.0)) / (k as f64 - m as f64);
            }
        }
        *wk = p;
    }
    w
}

/// Six-point Lagrange stencil along one axis; indices outside the grid carry zero.
fn stencil(grid: &GridSpec, y: f64) -> Option<(i64, [f64; 6])> {
    let s = (y + grid.half_width) / grid.dx();
    if s < -3.0 || s > grid.n as f64 + 2.0 {
        return None;
    }
    let j = s.floor();
    Some((j as i64 - 2, lagrange6(s - j)))
}

impl<T: Real> Envelope for WaveFunction<T> {
    fn at(&self, y: &[f64]) -> Complex<f64> {
        let n = self.grid.n as i64;
        let get = |i: i64| -> Option<usize> { (0..n).contains(&i).then_some(i as usize) };
        let c = |k: usize| Complex::new(self.values[k].re.as_f64(), self.values[k].im.as_f64());
        let mut out = Complex::new(0.0, 0.0);
        match self.grid.d {
            1 => {
                let Some((j0, w)) = stencil(&self.grid, y[0]) else { return out };
                for (m, wm) in w.iter().enumerate() {
                    if let Some(i) = get(j0 + m as i64) {
                        out += c(i) * wm;
                    }
                }
            }
            _ => {
                let (Some((a0, wa)), Some((b0, wb))) = (stencil(&self.grid, y[0]), stencil(&self.grid, y[1])) else {
                    return out;
                };
                for (p, wp) in wa.iter().enumerate() {
                    let Some(i) = get(a0 + p as i64) else { continue };
                    for (q, wq) in wb.iter().enumerate() {
                        if let Some(j) = get(b0 + q as i64) {
                            out += c(i * self.grid.n + j) * (wp * wq);
                        }
                    }
                }
            }
        }
        out
    }

    fn norm_l2(&self) -> f64 {
        self.norm()
    }
}

/// Classical action `S(t) = int_0^t (xi^2/2 - V) ds` sampled at the trajectory times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionRecord {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    /// Lagrangian `xi^2/2 - V` at each sample.
    pub rate: Vec<f64>,
}

impl ActionRecord {
    /// Cubic Hermite interpolation using the Lagrangian as derivative.
    pub fn at(&self, t: f64) -> Option<f64> {
        let (a, b) = (*self.t.first()?, *self.t.last()?);
        if t < a || t > b {
            return None;
        }
        let k = self.t.partition_point(|&s| s <= t).clamp(1, self.t.len() - 1);
        let h = self.t[k] - self.t[k - 1];
        if h == 0.0 {
            return Some(self.s[k]);
        }
        let u = (t - self.t[k - 1]) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        Some(h00 * self.s[k - 1] + h10 * h * self.rate[k - 1] + h01 * self.s[k] + h11 * h * self.rate[k])
    }
}

/// Cumulative end-corrected trapezoid rule of `xi^2/2 - V` along the samples, shifted so
/// that `S(0) = 0` when `t = 0` is covered (otherwise `S` vanishes at the first sample).
pub fn action<T: Real>(traj: &Trajectory<T>, pot: &ConicalPotential) -> ActionRecord {
    let t: Vec<f64> = traj.samples.iter().map(|p| p.t.as_f64()).collect();
    let rate: Vec<f64> = traj
        .samples
        .iter()
        .map(|p| {
            let x = to_f64_vec(&p.x);
            0.5 * p.xi.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() - pot.eval(&x)
        })
        .collect();
    // d/dt (xi^2/2 - V) = -2 xi . grad V; None on the singular set.
    let slope: Vec<Option<f64>> = traj
        .samples
        .iter()
        .map(|p| {
            let x = to_f64_vec(&p.x);
            let g = pot.grad(&x).ok()?;
            Some(-2.0 * g.iter().zip(&p.xi).map(|(g, v)| g * v.as_f64()).sum::<f64>())
        })
        .collect();
    let mut s = vec![0.0; t.len()];
    for k in 1..t.len() {
        let h = t[k] - t[k - 1];
        let mut step = 0.5 * h * (rate[k] + rate[k - 1]);
        if let (Some(a), Some(b)) = (slope[k - 1], slope[k]) {
            step += h * h / 12.0 * (a - b);
        }
        s[k] = s[k - 1] + step;
    }
    let mut rec = ActionRecord { t, s, rate };
    if let Some(s0) = rec.at(0.0) {
        for v in &mut rec.s {
            *v -= s0;
        }
    }
    rec
}

/// Centre of a packet at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PacketState {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub s: f64,
}

pub fn packet_state<T: Real>(traj: &Trajectory<T>, action: &ActionRecord, t: f64) -> Result<PacketState, WavepacketError> {
    let p = traj.state_at(T::lit(t)).ok_or(WavepacketError::OutOfRange(t))?;
    let s = action.at(t).ok_or(WavepacketError::OutOfRange(t))?;
    Ok(PacketState {
        t,
        x: to_f64_vec(&p.x),
        xi: to_f64_vec(&p.xi),
        s,
    })
}

/// Samples the packet on `grid` and scales it to the profile's norm.
pub fn assemble_packet<T: Real, E: Envelope>(
    v: &E,
    state: &PacketState,
    eps: f64,
    grid: GridSpec,
) -> Result<WaveFunction<T>, WavepacketError> {
    if state.x.len() != grid.d {
        return Err(QuantumError::DimensionMismatch(state.x.len(), grid.d).into());
    }
    let se = eps.sqrt();
    let amp = eps.powf(-(grid.d as f64) / 4.0);
    let values = (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let y: Vec<f64> = x.iter().zip(&state.x).map(|(a, b)| (a - b) / se).collect();
            let phase = (x.iter().zip(&state.x).zip(&state.xi).map(|((a, b), k)| k * (a - b)).sum::<f64>() + state.s) / eps;
            let c = v.at(&y) * amp * Complex::from_polar(1.0, phase);
            Complex::new(T::lit(c.re), T::lit(c.im))
        })
        .collect();
    let mut psi = WaveFunction { grid, eps, values, t: state.t };
    let total = psi.norm();
    let clipped = psi.boundary_mass() / (total * total);
    if clipped > 1e-12 {
        return Err(QuantumError::ProfileClipped(clipped).into());
    }
    psi.normalize();
    let target = T::lit(v.norm_l2());
    for c in &mut psi.values {
        *c = *c * target;
    }
    Ok(psi)
}

fn state_f64<T: Real>(traj: &Trajectory<T>, t: f64) -> Result<Vec<f64>, WavepacketError> {
    let p = traj.state_at(T::lit(t)).ok_or(WavepacketError::OutOfRange(t))?;
    Ok(to_f64_vec(&p.x))
}

/// Solves `i dt v = -1/2 Lap v + 1/2 Hess V(x(t)) y.y v` by Strang splitting,
/// the quadratic multiplier taken at the step midpoint. Returns the profile
/// at the step nearest each entry of `times`, integrating to the farthest one.
pub fn propagate_profile<T: Real, S: Real>(
    v0: &PacketProfile<T>,
    traj: &Trajectory<S>,
    pot: &ConicalPotential,
    dt: f64,
    times: &[f64],
) -> Result<Vec<PacketProfile<T>>, WavepacketError> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(QuantumError::BadTimeStep.into());
    }
    let t0 = v0.t;
    let t_end = times.iter().copied().fold(t0, |a, b| if (b - t0).abs() > (a - t0).abs() { b } else { a });
    let steps = ((t_end - t0) / dt.abs()).abs().round() as usize;
    let h = if steps == 0 { dt } else { (t_end - t0) / steps as f64 };
    let grid = v0.grid;
    let ys: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let mut prop = Propagator::<T>::from_samples(grid, 1.0, &vec![0.0; grid.len()], h);
    let index = |t: f64| if steps == 0 { 0 } else { ((t - t0) / h).round().clamp(0.0, steps as f64) as usize };
    let mut out: Vec<Option<PacketProfile<T>>> = vec![None; times.len()];
    let mut v = v0.clone();
    let mut quad = vec![0.0; grid.len()];
    let conical = !pot.is_smooth();
    for s in 0..=steps {
        if s > 0 {
            let tm = t0 + (s as f64 - 0.5) * h;
            let x = state_f64(traj, tm)?;
            if conical && pot.codim() == 1 {
                let a = pot.g_value(&state_f64(traj, tm - 0.5 * h)?)[0];
                let b = pot.g_value(&state_f64(traj, tm + 0.5 * h)?)[0];
                if a * b <= 0.0 {
                    return Err(WavepacketError::HessianUndefined(tm));
                }
            }
            let hess = pot.hessian(&x).map_err(|_| WavepacketError::HessianUndefined(tm))?;
            for (q, y) in quad.iter_mut().zip(&ys) {
                let mut acc = 0.0;
                for a in 0..y.len() {
                    for b in 0..y.len() {
                        acc += hess[(a, b)] * y[a] * y[b];
                    }
                }
                *q = 0.5 * acc;
            }
            prop.set_potential(&quad);
            prop.step(&mut v);
            v.t = t0 + s as f64 * h;
        }
        for (k, &t) in times.iter().enumerate() {
            if out[k].is_none() && index(t) == s {
                out[k] = Some(v.clone());
            }
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every index is visited")).collect())
}

/// `R^eps_t(y) = V(x + sqrt(eps) y) - V(x) - sqrt(eps) grad V(x).y - eps/2 Hess V(x) y.y`
/// on the points of `grid`, or `None` when `x` lies on the singular set.
pub fn taylor_remainder(pot: &ConicalPotential, x: &[f64], eps: f64, grid: &GridSpec) -> Option<Vec<f64>> {
    let grad = pot.grad(x).ok()?;
    let hess = pot.hessian(x).ok()?;
    let v0 = pot.eval(x);
    let se = eps.sqrt();
    Some(
        (0..grid.len())
            .map(|i| {
                let y = grid.point(i);
                let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + se * b).collect();
                let lin: f64 = grad.iter().zip(&y).map(|(g, b)| g * b).sum();
                let mut quad = 0.0;
                for a in 0..y.len() {
                    for b in 0..y.len() {
                        quad += hess[(a, b)] * y[a] * y[b];
                    }
                }
                pot.eval(&z) - v0 - se * lin - 0.5 * eps * quad
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorBound {
    pub times: Vec<f64>,
    /// `||R^eps_t v_t / eps||` at each trace time.
    pub integrand: Vec<f64>,
    /// Trapezoid integral of the integrand over the trace.
    pub total: f64,
}

/// `int ||R^eps_s v_s / eps|| ds` over the trace. Where the trajectory sits on
/// the singular set the remainder is taken from a nearby time (a null set in `s`).
pub fn error_functional<T: Real, S: Real>(
    trace: &[PacketProfile<T>],
    traj: &Trajectory<S>,
    pot: &ConicalPotential,
    eps: f64,
) -> Result<ErrorBound, WavepacketError> {
    let mut rows: Vec<(f64, f64)> = Vec::with_capacity(trace.len());
    for v in trace {
        let mut r = None;
        for nudge in [0.0, 1e-9, -1e-9, 1e-6, -1e-6, 1e-4, -1e-4] {
            let t = v.t + nudge;
            if let Ok(x) = state_f64(traj, t) {
                r = taylor_remainder(pot, &x, eps, &v.grid);
                if r.is_some() {
                    break;
                }
            }
        }
        let r = r.ok_or(WavepacketError::OutOfRange(v.t))?;
        let sq: f64 = r.iter().zip(&v.values).map(|(r, c)| (r / eps).powi(2) * c.norm_sqr().as_f64()).sum();
        rows.push((v.t, (sq * v.grid.cell()).sqrt()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = rows.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    Ok(ErrorBound { times: rows.iter().map(|r| r.0).collect(), integrand: rows.iter().map(|r| r.1).collect(), total })
}

/// Parameters of the crossing packet for `V = -|x|` launched from the apex with
/// momentum `eta_eps = eta eps^beta`, switched to free profile motion at `|t| = eps^alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingScheme {
    pub eta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub k: u32,
}

pub fn constraint_1(alpha: f64, beta: f64) -> f64 {
    2.0 * alpha - beta - 0.5
}

pub fn constraint_2(k: u32, alpha: f64, beta: f64) -> f64 {
    let k = k as f64;
    k / 2.0 - (k + 1.0) * alpha - (2.0 * k + 3.0) * beta
}

impl CrossingScheme {
    /// Checks the hypotheses and stores the smallest admissible `k`.
    pub fn new(eta: f64, beta: f64, alpha: f64) -> Result<Self, WavepacketError> {
        if !(eta <= 0.0) {
            return Err(WavepacketError::BadScheme(format!("eta = {eta} must be <= 0")));
        }
        if !(0.0..0.1).contains(&beta) {
            return Err(WavepacketError::BadScheme(format!("beta = {beta} outside [0, 0.1)")));
        }
        if constraint_1(alpha, beta) <= 0.0 {
            return Err(WavepacketError::BadScheme(format!("2 alpha - beta - 1/2 <= 0 (alpha = {alpha}, beta = {beta})")));
        }
        let k = (1..=MAX_K)
            .find(|&k| constraint_2(k, alpha, beta) > 0.0)
            .ok_or(WavepacketError::SchemeInfeasible { alpha, beta })?;
        Ok(Self { eta, beta, alpha, k })
    }

    pub fn with_default_alpha(eta: f64, beta: f64) -> Result<Self, WavepacketError> {
        Self::new(eta, beta, DEFAULT_ALPHA)
    }

    pub fn eta_eps(&self, eps: f64) -> f64 {
        self.eta * eps.powf(self.beta)
    }

    pub fn tau(&self, eps: f64) -> f64 {
        eps.powf(self.alpha)
    }

    /// `(x, xi)` on the crossing trajectory: `eta t + t^2/2` before the apex, `eta t - t^2/2` after.
    pub fn state(&self, eps: f64, t: f64) -> (f64, f64) {
        let eta = self.eta_eps(eps);
        if t <= 0.0 {
            (eta * t + t * t / 2.0, eta + t)
        } else {
            (eta * t - t * t / 2.0, eta - t)
        }
    }

    /// Closed-form action along [`Self::state`].
    pub fn action(&self, eps: f64, t: f64) -> f64 {
        let eta = self.eta_eps(eps);
        eta * eta * t / 2.0 - eta * t * t.abs() + t.powi(3) / 3.0
    }

    /// `varsigma(y) = eta_eps + sqrt(eta_eps^2 + 2 sqrt(eps) |y|)`: the time after
    /// which `x(t) + sqrt(eps) y` no longer changes sign.
    pub fn switch_point(&self, eps: f64, y: f64) -> f64 {
        let eta = self.eta_eps(eps);
        let u = 2.0 * eps.sqrt() * y.abs();
        // Rationalised to avoid cancellation when eta^2 dominates.
        u / ((eta * eta + u).sqrt() - eta)
    }

    /// `I^eps(t, y) = (1/eps) int_0^t R^eps_s(y) ds` in closed form.
    ///
    /// The remainder is nonzero only for `y > 0, 0 < s < varsigma` and
    /// `y < 0, -varsigma < s < 0`, where it equals `-/+ 2 (x(s) + sqrt(eps) y)`.
    pub fn phase_integral(&self, eps: f64, t: f64, y: f64) -> f64 {
        if y == 0.0 || t == 0.0 || (y > 0.0) != (t > 0.0) {
            return 0.0;
        }
        let eta = self.eta_eps(eps);
        let m = t.abs().min(self.switch_point(eps, y));
        let w = eps.sqrt() * y.abs();
        if y > 0.0 {
            -2.0 / eps * (eta * m * m / 2.0 - m.powi(3) / 6.0 + w * m)
        } else {
            -2.0 / eps * (-eta * m * m / 2.0 + m.powi(3) / 6.0 - w * m)
        }
    }

    /// The switch-time phase in the explicit form
    /// `sqrt(eps)|y/eta|^3 + (y/eta)^2 -/+ |y/eta|`, kept for comparison with
    /// [`Self::phase_integral`] at `t = +/- tau`.
    pub fn quoted_switch_phase(&self, eps: f64, y: f64, sign: f64) -> f64 {
        let r = y / self.eta_eps(eps);
        eps.sqrt() * r.abs().powi(3) + r * r - sign * r.abs()
    }
}

/// Profile trace of the crossing packet at each of `times`: the explicit phase
/// `exp(-i I^eps(t, y)) a(y)` for `|t| <= tau`, free motion from `+/- tau` beyond.
pub fn crossing_profile<T: Real>(
    a: &Profile,
    scheme: &CrossingScheme,
    eps: f64,
    grid: GridSpec,
    times: &[f64],
) -> Result<Vec<PacketProfile<T>>, WavepacketError> {
    let base = initial_profile::<T>(grid, a)?;
    let tau = scheme.tau(eps);
    let phased = |t: f64| {
        let mut v = base.clone();
        for (i, c) in v.values.iter_mut().enumerate() {
            let rot = Complex::from_polar(1.0, -scheme.phase_integral(eps, t, grid.point(i)[0]));
            *c = *c * Complex::new(T::lit(rot.re), T::lit(rot.im));
        }
        v.t = t;
        v
    };
    let zeros = vec![0.0; grid.len()];
    let out = times
        .iter()
        .map(|&t| {
            if t.abs() <= tau {
                return phased(t);
            }
            let seed = tau.copysign(t);
            let mut v = phased(seed);
            Propagator::<T>::from_samples(grid, 1.0, &zeros, t - seed).step(&mut v);
            v.t = t;
            v
        })
        .collect();
    Ok(out)
}
