use num_complex::Complex;
use serde_json::json;

use super::{Collector, HarnessError, Resolved};
use crate::catalog::{abs_cone, inverted_cone, singular_examples};
use crate::classify::{branch_roots_scalar, classify_point, scalar_data, solve_nu_p1, ClassificationReport};
use crate::flow::{integrate_exterior, FlowOptions, PhasePoint, Trajectory};
use crate::oracle::adjudicate;
use crate::potential::ConicalPotential;
use crate::quantum::{init_concentrated_state, observables, GridSpec, Profile, Propagator, WaveFunction};
use crate::wavepacket::{
    action, assemble_packet, crossing_profile, initial_profile, packet_state, profile_grid, propagate_profile,
    CrossingScheme, PacketProfile, PacketState,
};
use crate::wigner::{empirical_nu, nu_window, pair_observable, wigner_transform, Peak, DEFAULT_SUBSAMPLE};

type Psi = WaveFunction<f64>;

/// Track sample times as fractions of the horizon.
pub const TRACK_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
/// Step of the profile equation (eps-independent).
const PROFILE_DT: f64 = 1e-3;
const FLOW_DT: f64 = 1e-3;
/// Width of the smoothed right half-plane symbol used for the Wigner-side weight.
const HALF_PLANE_RAMP: f64 = 0.1;

fn grid(cfg: &Resolved) -> Result<GridSpec, HarnessError> {
    Ok(GridSpec::line(cfg.grid.half_width, cfg.grid.n)?)
}

fn smallest(eps: &[f64]) -> f64 {
    eps.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Quintic ramp: 0 below 0, 1 above 1.
fn ramp(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Sampled closed-form phase-space curve on `[t0, t1]`.
fn closed_form(t0: f64, t1: f64, f: impl Fn(f64) -> (f64, f64)) -> Trajectory<f64> {
    let n = 400;
    let samples = (0..=n)
        .map(|k| {
            let t = t0 + (t1 - t0) * k as f64 / n as f64;
            let (x, xi) = f(t);
            PhasePoint::new(vec![x], vec![xi], t)
        })
        .collect();
    Trajectory { samples, events: vec![], segments: vec![], crossings: vec![] }
}

/// Wigner snapshot of `psi` on a plotting box, at most 256 points per axis.
fn wigner_export(c: &mut Collector, name: String, psi: &Psi, x: (f64, f64), xi: (f64, f64)) -> Result<(), HarnessError> {
    let w = wigner_transform(psi, DEFAULT_SUBSAMPLE)?.crop(x, xi, 256);
    c.file(name, w.to_csv());
    Ok(())
}

fn deviation(p: &Peak, x: f64, xi: f64) -> f64 {
    (p.x - x).abs().max((p.xi - xi).abs())
}

/// States at `times`, integrating forward and backward from `psi0.t`.
/// Snapshots of `psi0` at `times` (either side of `psi0.t`). Each segment between
/// consecutive snapshot times is split into equal steps no longer than `dt`, so
/// snapshots land exactly on the requested times.
fn evolve(psi0: &Psi, pot: &ConicalPotential, dt: f64, times: &[f64]) -> Result<Vec<Psi>, HarnessError> {
    let t0 = psi0.t;
    let mut out: Vec<Option<Psi>> = vec![None; times.len()];
    for dir in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..times.len())
            .filter(|&k| if dir > 0.0 { times[k] >= t0 } else { times[k] < t0 })
            .collect();
        idx.sort_by(|&a, &b| (dir * times[a]).total_cmp(&(dir * times[b])));
        let mut psi = psi0.clone();
        for k in idx {
            let span = times[k] - psi.t;
            let n = (span.abs() / dt - 1e-9).ceil();
            if n >= 1.0 {
                let prop = Propagator::new(psi.grid, psi.eps, pot, span / n)?;
                prop.propagate(&mut psi, times[k], &[])?;
            }
            psi.t = times[k];
            out[k] = Some(psi.clone());
        }
    }
    Ok(out.into_iter().map(|o| o.expect("each time is on one side")).collect())
}

fn scaled(psi: &Psi, f: impl Fn(f64) -> f64) -> Psi {
    let mut out = psi.clone();
    for (i, c) in out.values.iter_mut().enumerate() {
        *c *= f(psi.grid.point(i)[0]);
    }
    out
}

fn mass(psi: &Psi) -> f64 {
    psi.norm().powi(2)
}

/// Exact free evolution of a profile over `t` (one kinetic step).
fn free_profile(v: &PacketProfile<f64>, t: f64) -> PacketProfile<f64> {
    let mut out = v.clone();
    if t != 0.0 {
        Propagator::<f64>::from_samples(v.grid, 1.0, &vec![0.0; v.grid.len()], t).step(&mut out);
    }
    out.t = t;
    out
}

fn trajectory(pot: &ConicalPotential, x0: f64, xi0: f64, t0: f64, t1: f64) -> Result<Trajectory<f64>, HarnessError> {
    let opts = FlowOptions { dt: FLOW_DT, stop_at_arrival: false, ..FlowOptions::default() };
    Ok(integrate_exterior(pot, &PhasePoint::new(vec![x0], vec![xi0], t0), t1, &opts)?)
}

/// `chi_+(y)`: 0 below `delta`, 1 above `2 delta`.
fn cut_plus(y: f64, delta: f64) -> f64 {
    ramp((y - delta) / delta)
}

pub(crate) fn rebound(cfg: &Resolved, c: &mut Collector) -> Result<(), HarnessError> {
    let pot = cfg.potential_or(inverted_cone());
    let grid = grid(cfg)?;
    let pgrid = profile_grid(1);
    let profiles = [
        ("all_right", Profile::Bump { lo: 0.0, hi: 4.0 }),
        ("even", Profile::Bump { lo: -3.0, hi: 3.0 }),
        ("split_70", Profile::split(0.0, 3.0, 0.7)),
    ];
    let horizon = cfg.horizon;
    let mut track: Vec<f64> = TRACK_TIMES.iter().flat_map(|f| [-f * horizon, f * horizon]).collect();
    track.sort_by(f64::total_cmp);
    let err_times: Vec<f64> = (0..=10).map(|k| k as f64 * horizon / 10.0).collect();
    let delta = cfg.delta;
    let finest = smallest(&cfg.eps);
    c.file("trajectory_plus.csv".into(), closed_form(-horizon, horizon, |t| (t * t / 2.0, t)).to_csv());
    c.file("trajectory_minus.csv".into(), closed_form(-horizon, horizon, |t| (-t * t / 2.0, -t)).to_csv());
    for &eps in &cfg.eps {
        c.timed(format!("{eps}"), |c| -> Result<(), HarnessError> {
            let se = eps.sqrt();
            let dt = cfg.dt_over_eps * eps;
            c.push(eps, 0.0, "dx", "", grid.dx());
            for (label, a) in &profiles {
                let right = a.right_mass();
                c.push(eps, 0.0, "expected_plus", label, right);
                c.push(eps, 0.0, "expected_minus", label, 1.0 - right);
                let psi0: Psi = init_concentrated_state(grid, eps, a, &[0.0], &[0.0])?;
                let snaps = evolve(&psi0, &pot, dt, &track)?;
                for (s, &t) in snaps.iter().zip(&track) {
                    let w = wigner_transform(s, DEFAULT_SUBSAMPLE)?;
                    for (side, name) in [(1.0, "track_dev_plus"), (-1.0, "track_dev_minus")] {
                        if let Some(p) = w.peak_where(|x, _| side * x > 0.0) {
                            c.push(eps, t, name, label, deviation(&p, side * t * t / 2.0, side * t));
                            if eps == finest {
                                c.peak(eps, t, &format!("{label}{}", if side > 0.0 { "+" } else { "-" }), &p);
                            }
                        }
                    }
                    if eps == finest && t == 0.5 * horizon {
                        wigner_export(c, format!("wigner_{label}_t{t}.csv"), s, (-1.0, 1.0), (-1.5, 1.5))?;
                    }
                    let multi = crate::wigner::peak_track(std::slice::from_ref(s))?.remove(0);
                    c.push(eps, t, "multi_peak", label, if multi.multi_peak { 1.0 } else { 0.0 });
                    if multi.multi_peak {
                        c.event(Some(eps), Some(t), "multi_peak", json!({ "profile": label, "peak": multi.peak, "second": multi.second }));
                    }
                }
                let end = snaps.last().expect("track times");
                let total = mass(end);
                c.push(eps, horizon, "p_plus", label, end.mass_where(|x| x[0] > 0.0) / total);
                c.push(eps, horizon, "p_minus", label, end.mass_where(|x| x[0] < 0.0) / total);
                let wp = pair_observable(end, |x, _| ramp(x / HALF_PLANE_RAMP))?;
                c.push(eps, horizon, "p_plus_wigner", label, wp);

                // Cut pieces a chi_+/-, propagated exactly and as free-profile packets.
                let v0 = initial_profile::<f64>(pgrid, a)?;
                let middle = scaled(&psi0, |x| 1.0 - cut_plus(x / se, delta) - cut_plus(-x / se, delta));
                c.push(eps, 0.0, "middle_mass", label, mass(&middle));
                for (side, name) in [(1.0, "piece_error_plus"), (-1.0, "piece_error_minus")] {
                    let piece = scaled(&psi0, |x| cut_plus(side * x / se, delta));
                    if mass(&piece) < 1e-12 {
                        continue;
                    }
                    let vp = scaled(&v0, |y| cut_plus(side * y, delta));
                    let exact = evolve(&piece, &pot, dt, &err_times)?;
                    for (s, &t) in exact.iter().zip(&err_times) {
                        let state = PacketState { t, x: vec![side * t * t / 2.0], xi: vec![side * t], s: t.powi(3) / 3.0 };
                        let phi: Psi = assemble_packet(&free_profile(&vp, t), &state, eps, grid)?;
                        c.push(eps, t, name, label, s.distance(&phi));
                    }
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// `(x, xi)` of the crossing trajectory of `V = -|x|` through the apex with momentum `eta`.
fn crossing_state(eta: f64, t: f64) -> (f64, f64) {
    let s = eta.signum();
    (eta * t + s * t * t.abs() / 2.0, eta + s * t.abs())
}

/// Distance between the quantum state and the crossing packet of the closed-form scheme.
/// Positive `eta` runs through the mirror image.
fn scheme_errors(
    a: &Profile,
    eta: f64,
    alpha: f64,
    eps: f64,
    snaps: &[Psi],
    times: &[f64],
) -> Result<Vec<f64>, HarnessError> {
    let mirror = eta > 0.0;
    let scheme = CrossingScheme::new(-eta.abs(), 0.0, alpha)?;
    let a = if mirror { mirrored(a) } else { a.clone() };
    let profiles = crossing_profile::<f64>(&a, &scheme, eps, profile_grid(1), times)?;
    let grid = snaps[0].grid;
    let mut out = Vec::new();
    for ((v, s), &t) in profiles.iter().zip(snaps).zip(times) {
        let (x, xi) = scheme.state(eps, t);
        let sign = if mirror { -1.0 } else { 1.0 };
        let mut v = v.clone();
        if mirror {
            v.values.reverse();
            v.values.rotate_right(1);
        }
        let state = PacketState { t, x: vec![sign * x], xi: vec![sign * xi], s: scheme.action(eps, t) };
        let phi: Psi = assemble_packet(&v, &state, eps, grid)?;
        out.push(s.distance(&phi));
    }
    Ok(out)
}

/// `a(-y)`, for profiles with a closed-form reflection.
fn mirrored(a: &Profile) -> Profile {
    match a {
        Profile::Gaussian { center, width } => Profile::Gaussian { center: -center, width: *width },
        Profile::Bump { lo, hi } => Profile::Bump { lo: -hi, hi: -lo },
        Profile::Split { left, right, right_weight } => Profile::Split {
            left: (-right.1, -right.0),
            right: (-left.1, -left.0),
            right_weight: 1.0 - right_weight,
        },
        other => other.clone(),
    }
}

pub(crate) fn crossing(cfg: &Resolved, c: &mut Collector) -> Result<(), HarnessError> {
    let pot = cfg.potential_or(inverted_cone());
    let grid = grid(cfg)?;
    let a = Profile::Gaussian { center: 0.0, width: 1.0 };
    let window = cfg.threshold("track_window");
    let mut times: Vec<f64> = (-6..=6).map(|k| k as f64 * window / 6.0).collect();
    if !times.iter().any(|t| (t - 0.5).abs() < 1e-12) {
        times.push(0.5);
        times.sort_by(f64::total_cmp);
    }
    let half = times.iter().position(|t| (t - 0.5).abs() < 1e-12).expect("t = 0.5 present");
    let eps = smallest(&cfg.eps);
    let span = (times[0], times[times.len() - 1]);
    c.timed(format!("{eps}"), |c| -> Result<(), HarnessError> {
        c.push(eps, 0.0, "dx", "", grid.dx());
        let dt = cfg.dt_over_eps * eps;
        for (label, eta) in [("fixed", cfg.eta), ("mirror", -cfg.eta)] {
            c.push(eps, 0.0, "eta", label, eta);
            c.file(format!("trajectory_{label}.csv"), closed_form(span.0, span.1, |t| crossing_state(eta, t)).to_csv());
            let psi0: Psi = init_concentrated_state(grid, eps, &a, &[0.0], &[eta])?;
            let snaps = evolve(&psi0, &pot, dt, &times)?;
            let mut means = Vec::new();
            for (s, &t) in snaps.iter().zip(&times) {
                let w = wigner_transform(s, DEFAULT_SUBSAMPLE)?;
                let p = w.peak_where(|_, _| true).expect("nonempty grid");
                let (x, xi) = crossing_state(eta, t);
                c.push(eps, t, "track_dev", label, deviation(&p, x, xi));
                c.peak(eps, t, label, &p);
                means.push(observables(s).position[0]);
            }
            let s = &snaps[half];
            let side = s.mass_where(|x| x[0] * eta > 0.0) / mass(s);
            c.push(eps, 0.5, "side_mass", label, side);
            let crossed = times.windows(2).zip(means.windows(2)).find(|(_, m)| m[0] * m[1] <= 0.0 && m[0] != m[1]);
            let tc = match crossed {
                Some((t, m)) => t[0] + (t[1] - t[0]) * m[0] / (m[0] - m[1]),
                None => f64::INFINITY,
            };
            c.push(eps, 0.0, "crossing_time", label, tc);
            for (e, &t) in scheme_errors(&a, eta, cfg.alpha, eps, &snaps, &times)?.iter().zip(&times) {
                c.push(eps, t, "scheme_error", label, *e);
            }
        }
        Ok(())
    })?;
    // eta = sign * eps^beta: the crossing trajectory approaches the eta = 0 parabola.
    let sign = cfg.eta.signum();
    let limit = closed_form(span.0, span.1, |t| (sign * t * t.abs() / 2.0, sign * t.abs()));
    c.file("trajectory_limit.csv".into(), limit.to_csv());
    for &eps in &cfg.eps {
        c.timed(format!("trend {eps}"), |c| -> Result<(), HarnessError> {
            let eta = sign * eps.powf(cfg.beta);
            c.push(eps, 0.0, "eta", "trend", eta);
            c.file(format!("trajectory_trend_{eps}.csv"), closed_form(span.0, span.1, |t| crossing_state(eta, t)).to_csv());
            let psi0: Psi = init_concentrated_state(grid, eps, &a, &[0.0], &[eta])?;
            let s = evolve(&psi0, &pot, cfg.dt_over_eps * eps, &[0.5])?.remove(0);
            let w = wigner_transform(&s, DEFAULT_SUBSAMPLE)?;
            let p = w.peak_where(|_, _| true).expect("nonempty grid");
            c.peak(eps, 0.5, "trend", &p);
            let (x0, xi0) = (sign * 0.125, sign * 0.5);
            c.push(eps, 0.5, "limit_distance", "trend", (p.x - x0).hypot(p.xi - xi0));
            let (x, xi) = crossing_state(eta, 0.5);
            c.push(eps, 0.5, "track_dev", "trend", deviation(&p, x, xi));
            Ok(())
        })?;
    }
    Ok(())
}

/// `V = |x|` from `(-1, 1)`: one kink at `t1 = sqrt(3) - 1`, returning to 0 at `t1 + 2 sqrt(3)`.
fn kinked(t: f64) -> (f64, f64) {
    let t1 = 3f64.sqrt() - 1.0;
    if t <= t1 {
        (-1.0 + t + t * t / 2.0, 1.0 + t)
    } else {
        let s = t - t1;
        (3f64.sqrt() * s - s * s / 2.0, 3f64.sqrt() - s)
    }
}

/// Normalized coherent state of `V = x^2/2` started at `(x0, 0)`, in closed form.
fn harmonic_coherent(x: f64, t: f64, eps: f64, x0: f64) -> Complex<f64> {
    let (xc, xic) = (x0 * t.cos(), -x0 * t.sin());
    let s = -0.5 * x0 * x0 * t.sin() * t.cos();
    let amp = (std::f64::consts::PI * eps).powf(-0.25) * (-(x - xc).powi(2) / (2.0 * eps)).exp();
    Complex::from_polar(amp, (xic * (x - xc) + s) / eps - t / 2.0)
}

pub(crate) fn smooth_transport(cfg: &Resolved, c: &mut Collector) -> Result<(), HarnessError> {
    let grid = grid(cfg)?;
    let gauss = Profile::Gaussian { center: 0.0, width: 1.0 };
    let horizon = cfg.horizon;
    let times: Vec<f64> = (1..=8).map(|k| k as f64 * horizon / 8.0).collect();
    let custom = cfg.potential.is_some();
    let pot = cfg.potential_or(abs_cone());
    let traj = trajectory(&pot, -1.0, 1.0, 0.0, horizon)?;
    for (k, t) in traj.crossings.iter().enumerate() {
        c.event(None, Some(*t), "kink", json!({ "index": k }));
    }
    c.file("trajectory_kinked.csv".into(), traj.to_csv());
    c.file("flow_events_kinked.json".into(), traj.events_json());
    let harmonic = ConicalPotential::parse("x1^2/2", "0", &["x1"], 1).expect("static expression");
    for &eps in &cfg.eps {
        c.timed(format!("{eps}"), |c| -> Result<(), HarnessError> {
            c.push(eps, 0.0, "dx", "", grid.dx());
            let dt = cfg.dt_over_eps * eps;
            let psi0: Psi = init_concentrated_state(grid, eps, &gauss, &[-1.0], &[1.0])?;
            for (s, &t) in evolve(&psi0, &pot, dt, &times)?.iter().zip(&times) {
                let p = wigner_transform(s, DEFAULT_SUBSAMPLE)?.peak_where(|_, _| true).expect("nonempty grid");
                let q = traj.state_at(t).ok_or(crate::wavepacket::WavepacketError::OutOfRange(t))?;
                c.push(eps, t, "track_dev", "kinked", deviation(&p, q.x[0], q.xi[0]));
                c.peak(eps, t, "kinked", &p);
                if !custom {
                    let (x, xi) = kinked(t);
                    c.push(eps, t, "flow_error", "kinked", (q.x[0] - x).abs().max((q.xi[0] - xi).abs()));
                }
            }

            let psi0: Psi = init_concentrated_state(grid, eps, &gauss, &[1.0], &[0.0])?;
            let near: Vec<f64> = TRACK_TIMES.to_vec();
            for (s, &t) in evolve(&psi0, &harmonic, dt, &near)?.iter().zip(&near) {
                let mut exact = s.clone();
                for (i, v) in exact.values.iter_mut().enumerate() {
                    *v = harmonic_coherent(grid.point(i)[0], t, eps, 1.0);
                }
                c.push(eps, t, "coherent_error", "harmonic", s.distance(&exact));
                if t == 0.5 {
                    wigner_export(c, format!("wigner_harmonic_{eps}_t{t}.csv"), s, (-2.0, 2.0), (-2.0, 2.0))?;
                }
            }

            // Right parabola x = (t - 1)^2 / 2 of V = -|x|, before it reaches the apex at t = 1.
            let pre = [0.2, 0.4, 0.6];
            let psi0: Psi = init_concentrated_state(grid, eps, &gauss, &[0.5], &[-1.0])?;
            for (s, &t) in evolve(&psi0, &inverted_cone(), dt, &pre)?.iter().zip(&pre) {
                let p = wigner_transform(s, DEFAULT_SUBSAMPLE)?.peak_where(|_, _| true).expect("nonempty grid");
                c.push(eps, t, "track_dev", "pre_arrival", deviation(&p, (t - 1.0).powi(2) / 2.0, t - 1.0));
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub(crate) fn static_cone(cfg: &Resolved, c: &mut Collector) -> Result<(), HarnessError> {
    let pot = cfg.potential_or(abs_cone());
    let grid = grid(cfg)?;
    let a = Profile::Bump { lo: -3.0, hi: 3.0 };
    let times: Vec<f64> = (0..=4).map(|k| k as f64 * cfg.horizon / 4.0).collect();
    for &eps in &cfg.eps {
        c.timed(format!("{eps}"), |c| -> Result<(), HarnessError> {
            let w = nu_window(eps);
            let psi0: Psi = init_concentrated_state(grid, eps, &a, &[0.0], &[0.0])?;
            for (s, &t) in evolve(&psi0, &pot, cfg.dt_over_eps * eps, &times)?.iter().zip(&times) {
                let obs = observables(s);
                c.push(eps, t, "mean_x", "", obs.position[0]);
                c.push(eps, t, "mean_xi", "", obs.momentum[0]);
                let nu = empirical_nu(s, &pot, w)?;
                c.push(eps, t, "nu_plus", "", nu.plus);
                c.push(eps, t, "nu_minus", "", nu.minus);
                c.push(eps, t, "retention", "", s.mass_where(|x| x[0].abs() <= w) / mass(s));
                if t == cfg.horizon {
                    wigner_export(c, format!("wigner_{eps}_t{t}.csv"), s, (-0.5, 0.5), (-0.5, 0.5))?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Golden targets as exact fractions `(numerator, denominator)`.
struct Golden {
    roots: &'static [(i64, i64)],
    zero_directions: &'static [i8],
    /// `(nu_+, nu_-)` for unit mass.
    weights: Option<((i64, i64), (i64, i64))>,
}

const GOLDEN: [(usize, Golden); 4] = [
    (0, Golden { roots: &[], zero_directions: &[], weights: Some(((1, 4), (3, 4))) }),
    (1, Golden { roots: &[(1, 2), (-3, 2)], zero_directions: &[], weights: Some(((3, 4), (1, 4))) }),
    (2, Golden { roots: &[], zero_directions: &[-1], weights: None }),
    (3, Golden { roots: &[(-2, 1)], zero_directions: &[1], weights: None }),
];

fn frac((n, d): (i64, i64)) -> f64 {
    n as f64 / d as f64
}

/// Largest deviation from the golden values; infinite on a structural mismatch.
fn golden_error(r: &ClassificationReport<f64>, g: &Golden) -> f64 {
    let roots = &r.roots.nonzero_roots;
    let dirs = &r.roots.zero_root_directions;
    if roots.len() != g.roots.len() || dirs.len() != g.zero_directions.len() {
        return f64::INFINITY;
    }
    let mut err = 0.0_f64;
    for (root, want) in roots.iter().zip(g.roots) {
        err = err.max((root[0] - frac(*want)).abs());
    }
    for (d, want) in dirs.iter().zip(g.zero_directions) {
        err = err.max((d[0] - *want as f64).abs());
    }
    if let Some((p, m)) = g.weights {
        match solve_nu_p1(&r.geometry, 1.0) {
            Ok(nu) => {
                err = err.max((nu.weight(&[1.0]) - frac(p)).abs()).max((nu.weight(&[-1.0]) - frac(m)).abs());
            }
            Err(_) => return f64::INFINITY,
        }
    }
    err
}

fn max_residual(r: &ClassificationReport<f64>) -> f64 {
    let mut res = 0.0_f64;
    for root in r.roots.nonzero_roots.iter().chain(r.roots.root_manifold_samples.iter().flatten()) {
        res = res.max(r.geometry.branch_residual(root));
    }
    for w in &r.roots.zero_root_directions {
        res = res.max(r.geometry.zero_root_residual(w));
    }
    res
}

pub(crate) fn classify_suite(_cfg: &Resolved, c: &mut Collector) -> Result<(), HarnessError> {
    let examples = singular_examples();
    c.timed("golden".to_string(), |c| -> Result<(), HarnessError> {
        for (i, g) in &GOLDEN {
            let ex = &examples[*i];
            let r = classify_point(&ex.potential, &ex.sigma)?;
            c.push(0.0, 0.0, "golden_error", ex.name, golden_error(&r, g));
            c.push(0.0, 0.0, "max_residual", ex.name, max_residual(&r));
            // Exact cross-check of the 1-D roots in rational arithmetic.
            let (a, f, _) = scalar_data(&r.geometry)?;
            let q = |v: f64| num_rational::Ratio::<i64>::approximate_float(v).expect("representable");
            let exact = branch_roots_scalar(q(a), q(f));
            let agrees = exact.nonzero.len() == g.roots.len()
                && exact.nonzero.iter().zip(g.roots).all(|(r, w)| *r == num_rational::Ratio::new(w.0, w.1));
            c.push(0.0, 0.0, "rational_agrees", ex.name, if agrees { 1.0 } else { 0.0 });
        }
        let ex = &examples[6];
        let r = classify_point(&ex.potential, &ex.sigma)?;
        let samples = r.roots.root_manifold_samples.clone().unwrap_or_default();
        let mut err = if samples.is_empty() { f64::INFINITY } else { 0.0_f64 };
        for s in &samples {
            err = err.max((s[0] - 2.25).abs()).max((s[1] * s[1] + s[2] * s[2] - 7.0 / 16.0).abs());
        }
        c.push(0.0, 0.0, "golden_error", ex.name, err);
        c.push(0.0, 0.0, "max_residual", ex.name, max_residual(&r));
        c.event(None, None, "isolated_roots", json!({ "example": ex.name, "roots": r.roots.nonzero_roots }));
        Ok(())
    })?;
    let stated: [(usize, &str); 2] = [(4, "single root -3"), (5, "no roots")];
    for (i, claim) in stated {
        let ex = &examples[i];
        c.timed(ex.name.to_string(), |c| -> Result<(), HarnessError> {
            let adj = adjudicate(ex.name, &ex.potential, &ex.sigma)?;
            let roots = adj.roots().to_vec();
            let branch = adj.branches.iter().map(|b| b.rel_error).fold(0.0, f64::max);
            let sweep = adj.arrivals.iter().map(|a| a.nearest_rel).fold(0.0, f64::max);
            c.push(0.0, 0.0, "max_residual", ex.name, adj.max_residual);
            c.push(0.0, 0.0, "root_count", ex.name, roots.len() as f64);
            c.push(0.0, 0.0, "branch_recovery", ex.name, branch);
            c.push(0.0, 0.0, "sweep_recovery", ex.name, sweep);
            c.push(0.0, 0.0, "arrivals", ex.name, adj.arrivals.len() as f64);
            let agrees = match i {
                4 => roots.len() == 1 && (roots[0][0] + 3.0).abs() < 1e-9,
                _ => roots.is_empty(),
            };
            c.push(0.0, 0.0, "agrees_with_stated", ex.name, if agrees { 1.0 } else { 0.0 });
            c.event(
                None,
                None,
                "adjudication",
                json!({ "example": ex.name, "stated": claim, "found": roots, "agrees": agrees, "shots": adj.shots, "branches": adj.branches }),
            );
            Ok(())
        })?;
    }
    Ok(())
}

/// `max_t ||Psi(t) - phi(t)||` rows for a packet launched at `(x0, xi0)` at time `t0`.
#[allow(clippy::too_many_arguments)]
fn packet_errors(
    c: &mut Collector,
    cfg: &Resolved,
    pot: &ConicalPotential,
    label: &str,
    eps: f64,
    (x0, xi0, t0): (f64, f64, f64),
    times: &[f64],
    refine: bool,
) -> Result<(), HarnessError> {
    let grid = grid(cfg)?;
    let a = Profile::Gaussian { center: 0.0, width: 1.0 };
    let traj = trajectory(pot, x0, xi0, t0, times[times.len() - 1])?;
    c.file(format!("trajectory_{label}.csv"), traj.to_csv());
    let act = action(&traj, pot);
    let mut v0 = initial_profile::<f64>(profile_grid(1), &a)?;
    v0.t = t0;
    let mut psi0: Psi = init_concentrated_state(grid, eps, &a, &[x0], &[xi0])?;
    psi0.t = t0;
    let dt = cfg.dt_over_eps * eps;
    let packets = |h: f64| -> Result<Vec<Psi>, HarnessError> {
        let prof = propagate_profile(&v0, &traj, pot, h, times)?;
        let mut out = Vec::new();
        for (v, &t) in prof.iter().zip(times) {
            out.push(assemble_packet(v, &packet_state(&traj, &act, t)?, eps, grid)?);
        }
        Ok(out)
    };
    let exact = evolve(&psi0, pot, dt, times)?;
    let phi = packets(PROFILE_DT)?;
    for ((s, p), &t) in exact.iter().zip(&phi).zip(times) {
        c.push(eps, t, "packet_error", label, s.distance(p));
    }
    if refine {
        let fine = evolve(&psi0, pot, dt / 2.0, times)?;
        let phi_fine = packets(PROFILE_DT / 2.0)?;
        for (k, &t) in times.iter().enumerate() {
            let sc = exact[k].distance(&fine[k]) + phi[k].distance(&phi_fine[k]);
            c.push(eps, t, "self_convergence", label, sc);
        }
    }
    Ok(())
}

pub(crate) fn packet_convergence(cfg: &Resolved, c: &mut Collector) -> Result<(), HarnessError> {
    let quartic = match &cfg.potential {
        Some(_) => cfg.potential_or(abs_cone()),
        None => ConicalPotential::parse("x1^2/2 + x1^4/10", "0", &["x1"], 1).expect("static expression"),
    };
    let quadratic = ConicalPotential::parse("x1^2/2", "0", &["x1"], 1).expect("static expression");
    let horizon = cfg.horizon;
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * horizon / 10.0).collect();
    let late: Vec<f64> = (3..=10).map(|k| k as f64 / 10.0).collect();
    for &eps in &cfg.eps {
        c.timed(format!("{eps}"), |c| -> Result<(), HarnessError> {
            packet_errors(c, cfg, &quartic, "quartic", eps, (1.0, 0.0, 0.0), &times, false)?;
            packet_errors(c, cfg, &quadratic, "quadratic", eps, (1.0, 0.0, 0.0), &times, true)?;
            // Right parabola x = t^2/2 of V = -|x| on t in [0.3, 1].
            packet_errors(c, cfg, &inverted_cone(), "right_parabola", eps, (0.045, 0.3, 0.3), &late, false)?;
            Ok(())
        })?;
    }
    Ok(())
}
