//! Classical Hamiltonian flow `x' = xi, xi' = -grad V(x)` for conical potentials.
//!
//! Codimension-one potentials are integrated on the one-sided smooth extension
//! `V_S + s g F` of the current side `s = sign g`; a sign change of `g` is
//! bisected to the crossing time and `s` is flipped, which realises the unique
//! continuation through points of the singular set with nonzero normal speed.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::Mat;
use crate::potential::{ConicalPotential, PotentialError, SINGULAR_TOL};
use crate::scalar::{axpy, dot, norm, scale, sub, Real};

/// `|g|` threshold at a local minimum for an arrival at the singular phase-space set.
pub const ARRIVAL_TOL: f64 = 1e-9;
/// Normal-speed threshold `|grad g xi|` for the same event.
pub const EVENT_TOL: f64 = 1e-6;
/// Time tolerance for crossing bisection.
pub const CROSSING_TIME_TOL: f64 = 1e-12;
/// Constraint drift allowed for the insider flow.
/// Gauss-Newton budget of one shot; each iteration must halve the miss.
pub const SHOT_ITERATIONS: usize = 8;
pub const INSIDER_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("step budget of {0} steps exhausted before reaching the end time")]
    StepSizeUnderflow(usize),
    #[error("start point lies on the singular phase-space set")]
    StartOnOmega,
    #[error("insider flow left the singular set (|g| = {0:e})")]
    LeftManifold(f64),
    #[error("cotangent vector is not tangent to the singular set (|grad g zeta| = {0:e})")]
    NotTangent(f64),
    #[error("seed at tau = {0:e} falls inside the singular tolerance")]
    SeedInsideSingularTol(f64),
    #[error("event time lies inside the sampling window")]
    WindowContainsEvent,
    #[error("trajectory does not cover the requested window")]
    WindowOutOfRange,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhasePoint<T> {
    pub x: Vec<T>,
    pub xi: Vec<T>,
    pub t: T,
}

impl<T: Real> PhasePoint<T> {
    pub fn new(x: Vec<T>, xi: Vec<T>, t: T) -> Self {
        Self { x, xi, t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Incoming,
    Outgoing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularArrival<T> {
    pub t0: T,
    pub sigma: Vec<T>,
    /// Lateral limit of the direction diagnostic; `None` when none was found.
    pub rho_limit: Option<Vec<T>>,
    pub side: Side,
    /// Branch-equation residual of `rho_limit`, when computed.
    pub residual: Option<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentTag {
    Exterior,
    Insider,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment<T> {
    pub t_start: T,
    pub t_end: T,
    pub tag: SegmentTag,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory<T> {
    pub samples: Vec<PhasePoint<T>>,
    pub events: Vec<SingularArrival<T>>,
    pub segments: Vec<Segment<T>>,
    /// Times at which the singular set was crossed with nonzero normal speed.
    pub crossings: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn start(&self) -> &PhasePoint<T> {
        &self.samples[0]
    }

    pub fn end(&self) -> &PhasePoint<T> {
        self.samples.last().expect("trajectory has samples")
    }

    pub fn t_range(&self) -> (T, T) {
        (self.start().t, self.end().t)
    }

    /// State at time `t` by cubic Hermite interpolation of `x` (with `xi` as its derivative).
    pub fn state_at(&self, t: T) -> Option<PhasePoint<T>> {
        let (a, b) = self.t_range();
        if t < a || t > b {
            return None;
        }
        let k = self.samples.partition_point(|s| s.t <= t).clamp(1, self.samples.len() - 1);
        let (p0, p1) = (&self.samples[k - 1], &self.samples[k]);
        let h = p1.t - p0.t;
        if h == T::zero() {
            return Some(p0.clone());
        }
        let s = (t - p0.t) / h;
        let (one, two, three) = (T::one(), T::lit(2.0), T::lit(3.0));
        let h00 = (one + two * s) * (one - s) * (one - s);
        let h10 = s * (one - s) * (one - s);
        let h01 = s * s * (three - two * s);
        let h11 = s * s * (s - one);
        let d00 = T::lit(6.0) * s * (s - one) / h;
        let d10 = (one - s) * (one - three * s);
        let d01 = -d00;
        let d11 = s * (three * s - two);
        let x = (0..p0.x.len())
            .map(|i| h00 * p0.x[i] + h10 * h * p0.xi[i] + h01 * p1.x[i] + h11 * h * p1.xi[i])
            .collect();
        let xi = (0..p0.x.len())
            .map(|i| d00 * p0.x[i] + d10 * p0.xi[i] + d01 * p1.x[i] + d11 * p1.xi[i])
            .collect();
        Some(PhasePoint { x, xi, t })
    }

    pub fn energies(&self, pot: &ConicalPotential) -> Vec<T> {
        self.samples.iter().map(|s| energy(pot, &s.x, &s.xi)).collect()
    }

    /// CSV with header `t,x1..xd,xi1..xid,segment_tag`.
    pub fn to_csv(&self) -> String {
        let d = self.start().x.len();
        let mut out = String::from("t");
        for i in 1..=d {
            out += &format!(",x{i}");
        }
        for i in 1..=d {
            out += &format!(",xi{i}");
        }
        out += ",segment_tag\n";
        for s in &self.samples {
            let tag = self
                .segments
                .iter()
                .find(|g| {
                    let (lo, hi) = if g.t_start <= g.t_end { (g.t_start, g.t_end) } else { (g.t_end, g.t_start) };
                    s.t >= lo && s.t <= hi
                })
                .map_or(SegmentTag::Exterior, |g| g.tag);
            out += &format!("{:e}", s.t.as_f64());
            for v in s.x.iter().chain(&s.xi) {
                out += &format!(",{:e}", v.as_f64());
            }
            out += match tag {
                SegmentTag::Exterior => ",exterior\n",
                SegmentTag::Insider => ",insider\n",
            };
        }
        out
    }

    pub fn events_json(&self) -> String {
        serde_json::to_string_pretty(&self.events).expect("events serialize")
    }

    fn reverse(&mut self) {
        self.samples.reverse();
        self.crossings.reverse();
        for s in &mut self.segments {
            std::mem::swap(&mut s.t_start, &mut s.t_end);
        }
        self.segments.reverse();
    }
}

pub fn energy<T: Real>(pot: &ConicalPotential, x: &[T], xi: &[T]) -> T {
    T::lit(0.5) * dot(xi, xi) + pot.eval(x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowOptions {
    /// Base step; its sign is ignored, direction follows `t_end`.
    pub dt: f64,
    /// Halvings allowed by the near-singular-set refinement rule.
    pub max_halvings: u32,
    pub max_steps: usize,
    /// Stop at the first arrival at the singular phase-space set.
    pub stop_at_arrival: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { dt: 1e-3, max_halvings: 20, max_steps: 20_000_000, stop_at_arrival: true }
    }
}

/// Force field used between events.
struct Dynamics<'a> {
    pot: &'a ConicalPotential,
    p1: bool,
}

impl Dynamics<'_> {
    fn force<T: Real>(&self, x: &[T], xi: &[T], side: T) -> Vec<T> {
        if self.p1 {
            return scale(-T::one(), &self.pot.side_grad(x, side));
        }
        match self.pot.grad(x) {
            Ok(g) => scale(-T::one(), &g),
            Err(_) => {
                // On the singular set: one-sided limit along the direction of motion.
                let jac = self.pot.g_jacobian(x);
                let w = jac.matvec(xi);
                let wn = norm(&w);
                let mut grad = self.pot.grad_smooth(x);
                if wn > T::zero() {
                    let back = jac.transpose().matvec(&scale(T::one() / wn, &w));
                    let f = self.pot.shape().value(x);
                    grad = axpy(f, &back, &grad);
                }
                scale(-T::one(), &grad)
            }
        }
    }

    fn rk4<T: Real>(&self, x: &[T], xi: &[T], h: T, side: T) -> (Vec<T>, Vec<T>) {
        let half = h * T::lit(0.5);
        let a1 = self.force(x, xi, side);
        let x2 = axpy(half, xi, x);
        let v2 = axpy(half, &a1, xi);
        let a2 = self.force(&x2, &v2, side);
        let x3 = axpy(half, &v2, x);
        let v3 = axpy(half, &a2, xi);
        let a3 = self.force(&x3, &v3, side);
        let x4 = axpy(h, &v3, x);
        let v4 = axpy(h, &a3, xi);
        let a4 = self.force(&x4, &v4, side);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        let xn = (0..x.len()).map(|i| x[i] + sixth * (xi[i] + two * v2[i] + two * v3[i] + v4[i])).collect();
        let vn = (0..x.len()).map(|i| xi[i] + sixth * (a1[i] + two * a2[i] + two * a3[i] + a4[i])).collect();
        (xn, vn)
    }

    /// Signed distance-like quantity and its time derivative: `g` for p = 1,
    /// `|g|^2 / 2` otherwise.
    fn gauge<T: Real>(&self, x: &[T], xi: &[T]) -> (T, T) {
        let g = self.pot.g_value(x);
        let gdot = self.pot.g_jacobian(x).matvec(xi);
        if self.p1 {
            (g[0], gdot[0])
        } else {
            (T::lit(0.5) * dot(&g, &g), dot(&g, &gdot))
        }
    }
}

fn side_of<T: Real>(pot: &ConicalPotential, x: &[T], xi: &[T], forward: bool) -> T {
    let g = pot.g_value(x)[0];
    if g.abs() > T::lit(SINGULAR_TOL) {
        return g.signum();
    }
    let gdot = dot(pot.constraints()[0].gradient(x).as_slice(), xi);
    if forward == (gdot >= T::zero()) {
        T::one()
    } else {
        -T::one()
    }
}

/// Integrates the exterior flow from `start` to `t_end` (either direction in time).
pub fn integrate_exterior<T: Real>(
    pot: &ConicalPotential,
    start: &PhasePoint<T>,
    t_end: T,
    opts: &FlowOptions,
) -> Result<Trajectory<T>, FlowError> {
    let dynamics = Dynamics { pot, p1: pot.codim() == 1 };
    let forward = t_end >= start.t;
    let dir = if forward { T::one() } else { -T::one() };
    let g0 = pot.g_value(&start.x);
    let ngxi = norm(&pot.g_jacobian(&start.x).matvec(&start.xi));
    if norm(&g0) <= T::lit(SINGULAR_TOL) && ngxi <= T::lit(EVENT_TOL) {
        return Err(FlowError::StartOnOmega);
    }
    let mut side = if dynamics.p1 { side_of(pot, &start.x, &start.xi, forward) } else { T::one() };
    let mut traj = Trajectory {
        samples: vec![start.clone()],
        events: Vec::new(),
        segments: Vec::new(),
        crossings: Vec::new(),
    };
    let base = T::lit(opts.dt.abs());
    let h_min = base / T::lit(2f64.powi(opts.max_halvings as i32));
    let ten = T::lit(10.0);
    let (mut x, mut xi, mut t) = (start.x.clone(), start.xi.clone(), start.t);
    let mut steps = 0usize;

    while (t_end - t) * dir > T::zero() {
        steps += 1;
        if steps > opts.max_steps {
            return Err(FlowError::StepSizeUnderflow(opts.max_steps));
        }
        let gn = pot.g_norm(&x);
        let speed = norm(&xi);
        let mut h = base;
        while gn < ten * h * speed && h > h_min {
            h = h * T::lit(0.5);
        }
        let remaining = (t_end - t) * dir;
        if h > remaining {
            h = remaining;
        }
        let hs = h * dir;
        let (g_a, gd_a) = dynamics.gauge(&x, &xi);
        let (xn, vn) = dynamics.rk4(&x, &xi, hs, side);
        let (g_b, gd_b) = dynamics.gauge(&xn, &vn);

        if dynamics.p1 && g_a * g_b < T::zero() {
            // Crossing: bisect the sub-step fraction to the zero of g.
            let (mut lo, mut hi) = (T::zero(), T::one());
            while (hi - lo) * h > T::lit(CROSSING_TIME_TOL) {
                let mid = (lo + hi) * T::lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                let (xm, _) = dynamics.rk4(&x, &xi, hs * mid, side);
                if pot.g_value(&xm)[0] * g_a > T::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (xc, vc) = dynamics.rk4(&x, &xi, hs * hi, side);
            t = t + hs * hi;
            x = xc;
            xi = vc;
            traj.samples.push(PhasePoint::new(x.clone(), xi.clone(), t));
            let gdot = dot(pot.constraints()[0].gradient(&x).as_slice(), &xi);
            if gdot.abs() <= T::lit(EVENT_TOL) {
                traj.events.push(arrival(pot, &x, t, forward));
                if opts.stop_at_arrival {
                    break;
                }
            }
            traj.crossings.push(t);
            side = -side;
            continue;
        }

        // |g| decreasing then increasing across the step: locate the minimum.
        let approaching_a = g_a * gd_a * dir < T::zero();
        let approaching_b = g_b * gd_b * dir < T::zero();
        if approaching_a && !approaching_b {
            let (mut lo, mut hi) = (T::zero(), T::one());
            for _ in 0..200 {
                let mid = (lo + hi) * T::lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                let (xm, vm) = dynamics.rk4(&x, &xi, hs * mid, side);
                let (gm, gdm) = dynamics.gauge(&xm, &vm);
                if gm * gdm * dir < T::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let frac = (lo + hi) * T::lit(0.5);
            let (xm, vm) = dynamics.rk4(&x, &xi, hs * frac, side);
            let gmin = pot.g_norm(&xm);
            let ngxi = norm(&pot.g_jacobian(&xm).matvec(&vm));
            if gmin <= T::lit(ARRIVAL_TOL) && ngxi <= T::lit(EVENT_TOL) {
                t = t + hs * frac;
                x = xm;
                xi = vm;
                traj.samples.push(PhasePoint::new(x.clone(), xi.clone(), t));
                traj.events.push(arrival(pot, &x, t, forward));
                if opts.stop_at_arrival {
                    break;
                }
                continue;
            }
        }
        t = t + hs;
        x = xn;
        xi = vn;
        traj.samples.push(PhasePoint::new(x.clone(), xi.clone(), t));
    }
    traj.segments.push(Segment { t_start: start.t, t_end: t, tag: SegmentTag::Exterior });
    if !forward {
        traj.reverse();
    }
    Ok(traj)
}

fn arrival<T: Real>(pot: &ConicalPotential, x: &[T], t: T, forward: bool) -> SingularArrival<T> {
    let sigma = pot.project_to_singular_set(x).unwrap_or_else(|| x.to_vec());
    SingularArrival {
        t0: t,
        sigma,
        rho_limit: None,
        side: if forward { Side::Incoming } else { Side::Outgoing },
        residual: None,
    }
}

fn orthonormal_kernel<T: Real>(a: &Mat<T>) -> Vec<Vec<T>> {
    let d = a.cols();
    let jt = a.transpose();
    let proj = Mat::identity(d).sub(&jt.matmul(&a.matmul(&jt).inverse().expect("full rank")).matmul(a));
    let mut basis: Vec<Vec<T>> = Vec::new();
    for j in 0..d {
        let mut v = proj.col(j);
        for b in &basis {
            v = axpy(-dot(b, &v), b, &v);
        }
        let n = norm(&v);
        if n > T::tol(1e-8) {
            basis.push(scale(T::one() / n, &v));
        }
    }
    basis
}

/// Flow on the singular set driven by `V_S` restricted to it.
pub fn integrate_insider<T: Real>(
    pot: &ConicalPotential,
    sigma0: &[T],
    zeta0: &[T],
    t_end: T,
    opts: &FlowOptions,
) -> Result<Trajectory<T>, FlowError> {
    let g0 = pot.g_norm(sigma0);
    if g0 > T::lit(SINGULAR_TOL) {
        return Err(PotentialError::NotOnSingularSet(g0.as_f64()).into());
    }
    let jac = pot.g_jacobian(sigma0);
    let normal_speed = norm(&jac.matvec(zeta0));
    if normal_speed > T::lit(INSIDER_TOL) {
        return Err(FlowError::NotTangent(normal_speed.as_f64()));
    }
    let forward = t_end >= T::zero();
    let dir = if forward { T::one() } else { -T::one() };
    let h0 = T::lit(opts.dt.abs());
    let n_steps = ((t_end.abs() / h0).ceil().to_usize().unwrap_or(0)).max(1);
    let h = t_end / T::lit(n_steps as f64);
    let mut samples = vec![PhasePoint::new(sigma0.to_vec(), zeta0.to_vec(), T::zero())];
    let _ = dir;

    if pot.has_affine_constraints() {
        let basis = orthonormal_kernel(&jac);
        let embed = |y: &[T]| -> Vec<T> {
            let mut x = sigma0.to_vec();
            for (c, b) in y.iter().zip(&basis) {
                x = axpy(*c, b, &x);
            }
            x
        };
        let tangent_vec = |v: &[T]| -> Vec<T> {
            let mut out = vec![T::zero(); sigma0.len()];
            for (c, b) in v.iter().zip(&basis) {
                out = axpy(*c, b, &out);
            }
            out
        };
        let accel = |y: &[T]| -> Vec<T> {
            let gr = pot.grad_smooth(&embed(y));
            basis.iter().map(|b| -dot(b, &gr)).collect()
        };
        let mut y = vec![T::zero(); basis.len()];
        let mut eta: Vec<T> = basis.iter().map(|b| dot(b, zeta0)).collect();
        for k in 1..=n_steps {
            let half = h * T::lit(0.5);
            let a1 = accel(&y);
            let y2 = axpy(half, &eta, &y);
            let e2 = axpy(half, &a1, &eta);
            let a2 = accel(&y2);
            let y3 = axpy(half, &e2, &y);
            let e3 = axpy(half, &a2, &eta);
            let a3 = accel(&y3);
            let y4 = axpy(h, &e3, &y);
            let e4 = axpy(h, &a3, &eta);
            let a4 = accel(&y4);
            let sixth = h / T::lit(6.0);
            let two = T::lit(2.0);
            for i in 0..y.len() {
                y[i] = y[i] + sixth * (eta[i] + two * e2[i] + two * e3[i] + e4[i]);
            }
            let new_eta: Vec<T> =
                (0..y.len()).map(|i| eta[i] + sixth * (a1[i] + two * a2[i] + two * a3[i] + a4[i])).collect();
            eta = new_eta;
            samples.push(PhasePoint::new(embed(&y), tangent_vec(&eta), h * T::lit(k as f64)));
        }
    } else {
        let project = |x: &[T], xi: &[T]| -> Result<(Vec<T>, Vec<T>), FlowError> {
            let xp = pot.project_to_singular_set(x).ok_or(FlowError::LeftManifold(pot.g_norm(x).as_f64()))?;
            let geo = pot.geometry(&xp)?;
            Ok((xp, geo.tangent_projector.matvec(xi)))
        };
        let accel = |x: &[T]| -> Result<Vec<T>, FlowError> {
            let geo = pot.geometry(x)?;
            Ok(scale(-T::one(), &geo.tangent_projector.matvec(&pot.grad_smooth(x))))
        };
        let (mut x, mut xi) = (sigma0.to_vec(), zeta0.to_vec());
        for k in 1..=n_steps {
            let half = h * T::lit(0.5);
            let a1 = accel(&x)?;
            let (x2, v2) = project(&axpy(half, &xi, &x), &axpy(half, &a1, &xi))?;
            let a2 = accel(&x2)?;
            let (x3, v3) = project(&axpy(half, &v2, &x), &axpy(half, &a2, &xi))?;
            let a3 = accel(&x3)?;
            let (x4, v4) = project(&axpy(h, &v3, &x), &axpy(h, &a3, &xi))?;
            let a4 = accel(&x4)?;
            let sixth = h / T::lit(6.0);
            let two = T::lit(2.0);
            let xn: Vec<T> = (0..x.len()).map(|i| x[i] + sixth * (xi[i] + two * v2[i] + two * v3[i] + v4[i])).collect();
            let vn: Vec<T> = (0..x.len()).map(|i| xi[i] + sixth * (a1[i] + two * a2[i] + two * a3[i] + a4[i])).collect();
            let (xp, vp) = project(&xn, &vn)?;
            x = xp;
            xi = vp;
            samples.push(PhasePoint::new(x.clone(), xi.clone(), h * T::lit(k as f64)));
        }
    }
    for s in &samples {
        let drift = pot.g_norm(&s.x).max(norm(&pot.g_jacobian(&s.x).matvec(&s.xi)));
        if drift > T::lit(INSIDER_TOL) {
            return Err(FlowError::LeftManifold(drift.as_f64()));
        }
    }
    if !forward {
        samples.reverse();
    }
    let (a, b) = (samples[0].t, samples[samples.len() - 1].t);
    Ok(Trajectory {
        samples,
        events: Vec::new(),
        segments: vec![Segment { t_start: a, t_end: b, tag: SegmentTag::Insider }],
        crossings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Trajectory leaving (forward) or reaching (backward) the singular point `sigma`
/// at `t = 0` along the quadratic departure `x = sigma + t^2 rho0 / 2`.
pub fn launch_branch<T: Real>(
    pot: &ConicalPotential,
    sigma: &[T],
    rho0: &[T],
    direction: Direction,
    tau: T,
    t_end: T,
    opts: &FlowOptions,
) -> Result<Trajectory<T>, FlowError> {
    let half_tau2 = T::lit(0.5) * tau * tau;
    let x = axpy(half_tau2, rho0, sigma);
    if pot.g_norm(&x) <= T::lit(SINGULAR_TOL) {
        return Err(FlowError::SeedInsideSingularTol(tau.as_f64()));
    }
    let (seed, end, side) = match direction {
        Direction::Forward => (PhasePoint::new(x, scale(tau, rho0), tau), t_end.abs(), Side::Outgoing),
        Direction::Backward => (PhasePoint::new(x, scale(-tau, rho0), -tau), -t_end.abs(), Side::Incoming),
    };
    let mut traj = integrate_exterior(pot, &seed, end, opts)?;
    traj.events.insert(
        0,
        SingularArrival { t0: T::zero(), sigma: sigma.to_vec(), rho_limit: None, side, residual: None },
    );
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoDiagnostic<T> {
    /// `(t, rho(t))` at `t0 + s tau 2^{-k}`, k = 0, 1, 2.
    pub samples: Vec<(T, Vec<T>)>,
    /// Richardson-extrapolated lateral limit.
    pub limit: Vec<T>,
    /// Largest angle between sampled directions, radians.
    pub direction_drift: T,
    /// `|rho|` shrinking towards zero while the direction drifts.
    pub asymptotic: bool,
}

/// The direction diagnostic `rho(t) = 2 / (t - t0)^2 t(grad g) D_g^{-1} g(x(t))`.
pub fn rho_at<T: Real>(pot: &ConicalPotential, sigma: &[T], x: &[T], dt: T) -> Vec<T> {
    let jac = pot.g_jacobian(sigma);
    let d_g = jac.matmul(&jac.transpose());
    let c = d_g.solve(&pot.g_value(x)).unwrap_or_else(|| vec![T::nan(); jac.rows()]);
    scale(T::lit(2.0) / (dt * dt), &jac.transpose().matvec(&c))
}

/// Samples `rho` on one side of `event.t0` inside `window` and extrapolates its limit.
pub fn rho_diagnostic<T: Real>(
    pot: &ConicalPotential,
    traj: &Trajectory<T>,
    event: &SingularArrival<T>,
    window: (T, T),
) -> Result<RhoDiagnostic<T>, FlowError> {
    let (a, b) = if window.0 <= window.1 { window } else { (window.1, window.0) };
    let t0 = event.t0;
    if a < t0 && t0 < b {
        return Err(FlowError::WindowContainsEvent);
    }
    let (s, tau) = if a >= t0 { (T::one(), b - t0) } else { (-T::one(), t0 - a) };
    let mut samples = Vec::new();
    for k in 0..3 {
        let dt = s * tau / T::lit(2f64.powi(k));
        let st = traj.state_at(t0 + dt).ok_or(FlowError::WindowOutOfRange)?;
        samples.push((t0 + dt, rho_at(pot, &event.sigma, &st.x, dt)));
    }
    let r: Vec<&Vec<T>> = samples.iter().map(|(_, v)| v).collect();
    let two = T::lit(2.0);
    let r1_0 = sub(&scale(two, r[1]), r[0]);
    let r1_1 = sub(&scale(two, r[2]), r[1]);
    let limit = scale(T::one() / T::lit(3.0), &sub(&scale(T::lit(4.0), &r1_1), &r1_0));
    let mut drift = T::zero();
    for i in 0..3 {
        for j in i + 1..3 {
            let (ni, nj) = (norm(r[i]), norm(r[j]));
            if ni > T::zero() && nj > T::zero() {
                let c = (dot(r[i], r[j]) / (ni * nj)).max(-T::one()).min(T::one());
                drift = drift.max(c.acos());
            }
        }
    }
    let shrinking = norm(r[2]) < T::lit(0.6) * norm(r[0]) && norm(r[1]) < norm(r[0]);
    let asymptotic = shrinking && (drift > T::lit(1e-3) || norm(&limit) < T::lit(0.05) * norm(r[0]));
    Ok(RhoDiagnostic { samples, limit, direction_drift: drift, asymptotic })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShotArrival<T> {
    pub start: PhasePoint<T>,
    pub event: SingularArrival<T>,
    pub diagnostic: RhoDiagnostic<T>,
}

/// Orthonormal basis of the normal space `range t(grad g)` at `sigma`.
fn normal_basis<T: Real>(pot: &ConicalPotential, sigma: &[T]) -> Vec<Vec<T>> {
    let jac = pot.g_jacobian(sigma);
    let mut basis: Vec<Vec<T>> = Vec::new();
    for r in 0..jac.rows() {
        let mut v = jac.row(r).to_vec();
        for b in &basis {
            v = axpy(-dot(b, &v), b, &v);
        }
        let n = norm(&v);
        basis.push(scale(T::one() / n, &v));
    }
    basis
}

/// Shoots from `sigma + r u` towards `sigma` with the speed that matches the
/// energy of rest at `sigma`, adjusting the launch direction by Gauss-Newton
/// until the trajectory reaches the singular phase-space set. Returns the
/// arrival and its incoming direction diagnostic, or `None` when the shot
/// cannot arrive (uphill start or no convergence).
pub fn shoot_arrival<T: Real>(
    pot: &ConicalPotential,
    sigma: &[T],
    u: &[T],
    r: T,
) -> Option<ShotArrival<T>> {
    let x0 = axpy(r, u, sigma);
    let drop = pot.eval(sigma) - pot.eval(&x0);
    if drop <= T::zero() {
        return None;
    }
    let speed = (T::lit(2.0) * drop).sqrt();
    let basis = normal_basis(pot, sigma);
    let p = basis.len();
    let launch = |c: &[T]| -> Vec<T> {
        let mut v = vec![T::zero(); sigma.len()];
        for (ci, b) in c.iter().zip(&basis) {
            v = axpy(*ci, b, &v);
        }
        scale(-speed / norm(&v), &v)
    };
    let dynamics = Dynamics { pot, p1: p == 1 };
    let side = if p == 1 && pot.g_value(&x0)[0] < T::zero() { -T::one() } else { T::one() };
    let accel = norm(&dynamics.force(&x0, &vec![T::zero(); x0.len()], side)).max(T::tol(1e-6));
    let t_est = (T::lit(2.0) * r / accel).sqrt().min(T::lit(2.0) * r / speed);
    let h = t_est / T::lit(200.0);
    let max_steps = 4000usize;
    let inner = T::lit(1e-3) * r;
    let to_normal = |y: &[T]| -> Vec<T> { basis.iter().map(|b| dot(b, y)).collect() };

    // Fixed-step approach up to the last sample before closest approach, then a
    // constant-acceleration extrapolation: (trajectory, time, normal miss).
    let shot = |c: &[T]| -> Option<(Trajectory<T>, T, Vec<T>)> {
        let mut cur = PhasePoint::new(x0.clone(), launch(c), T::zero());
        let mut samples = vec![cur.clone()];
        for _ in 0..max_steps {
            let y = sub(&cur.x, sigma);
            if norm(&y) <= inner {
                break;
            }
            let (x, xi) = dynamics.rk4(&cur.x, &cur.xi, h, side);
            let next = PhasePoint::new(x, xi, cur.t + h);
            if dot(&sub(&next.x, sigma), &next.xi) >= T::zero() {
                break;
            }
            samples.push(next.clone());
            cur = next;
        }
        let y = sub(&cur.x, sigma);
        let acc = dynamics.force(&cur.x, &cur.xi, side);
        let at = |s: T| axpy(T::lit(0.5) * s * s, &acc, &axpy(s, &cur.xi, &y));
        let (mut lo, mut hi) = (T::zero(), T::lit(4.0) * h.max(T::lit(2.0) * norm(&y) / norm(&cur.xi)));
        for _ in 0..100 {
            let m1 = lo + (hi - lo) / T::lit(3.0);
            let m2 = hi - (hi - lo) / T::lit(3.0);
            if norm(&at(m1)) < norm(&at(m2)) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let s = (lo + hi) / T::lit(2.0);
        let tm = cur.t + s;
        let traj = Trajectory { samples, events: vec![], segments: vec![], crossings: vec![] };
        Some((traj, tm, to_normal(&at(s))))
    };

    let c0: Vec<T> = basis.iter().map(|b| dot(b, u)).collect();
    let mut c = c0.clone();
    let mut cur = shot(&c)?;
    let mut found = None;
    for _ in 0..SHOT_ITERATIONS {
        let (_, _, miss) = &cur;
        if norm(miss) <= T::lit(ARRIVAL_TOL) {
            found = Some(cur);
            break;
        }
        if p == 1 {
            return None;
        }
        let fd = T::lit(1e-7);
        let mut jm = Mat::zeros(p, p);
        for j in 0..p {
            let mut cj = c.clone();
            cj[j] = cj[j] + fd;
            let (_, _, mj) = shot(&cj)?;
            for i in 0..p {
                jm[(i, j)] = (mj[i] - miss[i]) / fd;
            }
        }
        // Minimum-norm Gauss-Newton step; c is scale-free so the system is singular by one.
        let jt = jm.transpose();
        let mut a = jm.matmul(&jt);
        for i in 0..p {
            a[(i, i)] = a[(i, i)] + T::tol(1e-14);
        }
        let mut step = jt.matvec(&a.solve(miss)?);
        let sn = norm(&step);
        if sn > T::lit(0.25) {
            step = scale(T::lit(0.25) / sn, &step);
        }
        let mut improved = None;
        let mut lambda = T::one();
        for _ in 0..8 {
            let trial = sub(&c, &scale(lambda, &step));
            let trial = scale(T::one() / norm(&trial), &trial);
            if dot(&trial, &c0) > T::zero() {
                if let Some(next) = shot(&trial) {
                    if norm(&next.2) < T::lit(0.5) * norm(miss) {
                        improved = Some((trial, next));
                        break;
                    }
                }
            }
            lambda = lambda * T::lit(0.5);
        }
        let (trial, next) = improved?;
        c = trial;
        cur = next;
    }
    let (traj, t0, _) = found?;
    let sigma_hit = traj.state_at(t0).map_or_else(|| sigma.to_vec(), |s| s.x);
    let event = SingularArrival {
        t0,
        sigma: pot.project_to_singular_set(&sigma_hit).unwrap_or(sigma_hit),
        rho_limit: None,
        side: Side::Incoming,
        residual: None,
    };
    let t0 = event.t0;
    let diagnostic = rho_diagnostic(pot, &traj, &event, (t0 * T::lit(0.5), t0 * T::lit(0.875))).ok()?;
    let mut event = event;
    event.rho_limit = Some(diagnostic.limit.clone());
    Some(ShotArrival { start: traj.start().clone(), event, diagnostic })
}

/// Convenience: `x(t), xi(t)` at the sample closest to `t`.
pub fn nearest_sample<T: Real>(traj: &Trajectory<T>, t: T) -> &PhasePoint<T> {
    traj.samples
        .iter()
        .min_by(|a, b| (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap())
        .expect("non-empty trajectory")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pot(vs: &str, f: &str) -> ConicalPotential {
        ConicalPotential::parse(vs, f, &["x1"], 1).unwrap()
    }

    #[test]
    fn hermite_is_exact_on_parabolas() {
        let samples: Vec<PhasePoint<f64>> = (0..5)
            .map(|k| {
                let t = k as f64 * 0.25;
                PhasePoint::new(vec![0.5 * t * t], vec![t], t)
            })
            .collect();
        let traj = Trajectory { samples, events: vec![], segments: vec![], crossings: vec![] };
        let s = traj.state_at(0.6).unwrap();
        assert!((s.x[0] - 0.18).abs() < 1e-15);
        assert!((s.xi[0] - 0.6).abs() < 1e-14);
        assert!(traj.state_at(2.0).is_none());
    }

    #[test]
    fn inverted_cone_arrival() {
        let p = pot("0", "-1");
        let traj = integrate_exterior(&p, &PhasePoint::new(vec![0.5_f64], vec![-1.0], 0.0), 2.0, &FlowOptions::default())
            .unwrap();
        assert_eq!(traj.events.len(), 1);
        let ev = &traj.events[0];
        assert!((ev.t0 - 1.0).abs() < 1e-6, "t0 = {}", ev.t0);
        let diag = rho_diagnostic(&p, &traj, ev, (ev.t0 - 0.4, ev.t0 - 0.1)).unwrap();
        assert!((diag.limit[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cone_crossing_is_continued() {
        let p = pot("0", "1");
        let traj = integrate_exterior(&p, &PhasePoint::new(vec![-1.0], vec![1.0], 0.0), 2.0, &FlowOptions::default())
            .unwrap();
        assert!(traj.events.is_empty());
        // Energy 1/2 + 1: reaches x = 0 with speed sqrt(3) at t = sqrt(3) - 1.
        assert_eq!(traj.crossings.len(), 1);
        assert!((traj.crossings[0] - (3f64.sqrt() - 1.0)).abs() < 1e-10);
        let e = traj.energies(&p);
        assert!(e.iter().all(|v| (v - 1.5).abs() < 1e-10));
    }
}
