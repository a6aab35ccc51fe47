//! Split-step Fourier propagation of `i eps dt Psi = -eps^2/2 Lap Psi + V Psi`
//! on a periodic box `[-L, L)^d`, d = 1 or 2.
//!
//! The potential enters only through pointwise phases, so the kink of a
//! conical potential is sampled as is.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ScalarField;
use crate::potential::ConicalPotential;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("grid needs d in {{1, 2}}, N a power of two and L > 0 (d = {d}, N = {n}, L = {l})")]
    BadGrid { d: usize, n: usize, l: f64 },
    #[error("potential has dimension {0}, grid has {1}")]
    DimensionMismatch(usize, usize),
    #[error("profile reaches the grid boundary (mass {0:e} in the guard band)")]
    ProfileClipped(f64),
    #[error("boundary mass {mass:e} at t = {t}: the box is too small")]
    BoundaryMassExceeded { t: f64, mass: f64 },
    #[error("time step must be nonzero and finite")]
    BadTimeStep,
}

/// Guard-band mass allowed before a run is declared contaminated by wrap-around.
pub const BOUNDARY_MASS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub half_width: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(d: usize, half_width: f64, n: usize) -> Result<Self, QuantumError> {
        if !(1..=2).contains(&d) || !n.is_power_of_two() || n < 4 || !(half_width > 0.0) {
            return Err(QuantumError::BadGrid { d, n, l: half_width });
        }
        Ok(Self { d, half_width, n })
    }

    pub fn line(half_width: f64, n: usize) -> Result<Self, QuantumError> {
        Self::new(1, half_width, n)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume `dx^d`.
    pub fn cell(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    pub fn axis(&self) -> Vec<f64> {
        (0..self.n).map(|j| -self.half_width + j as f64 * self.dx()).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        let dk = PI / self.half_width;
        (0..n).map(|j| if j < n / 2 { j } else { j - n } as f64 * dk).collect()
    }

    /// Position of flat index `idx` (row-major, last axis fastest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let dx = self.dx();
        match self.d {
            1 => vec![-self.half_width + idx as f64 * dx],
            _ => vec![
                -self.half_width + (idx / self.n) as f64 * dx,
                -self.half_width + (idx % self.n) as f64 * dx,
            ],
        }
    }

    /// Whether flat index `idx` lies within `2 dx` of the box boundary.
    fn in_guard_band(&self, idx: usize) -> bool {
        let edge = |j: usize| j < 2 || j + 2 >= self.n;
        match self.d {
            1 => edge(idx),
            _ => edge(idx / self.n) || edge(idx % self.n),
        }
    }
}

/// Envelope `a(y)` of a concentrated state, in the rescaled variable `y = (x - x0)/sqrt(eps)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `exp(-|y - center|^2 / (2 width^2))`.
    Gaussian { center: f64, width: f64 },
    /// Smooth compactly supported bump on `[lo, hi]` (first axis; Gaussian-free in the others).
    Bump { lo: f64, hi: f64 },
    /// Weighted sum of two bumps, used to prescribe a left/right mass split.
    Split { left: (f64, f64), right: (f64, f64), right_weight: f64 },
    /// Arbitrary real expression in `x1` (and `x2`), read as `y`.
    Field(ScalarField),
    /// Samples on a uniform `y` grid, linearly interpolated and zero outside.
    Sampled { y0: f64, dy: f64, re: Vec<f64>, im: Vec<f64> },
}

fn bump(y: f64, lo: f64, hi: f64) -> f64 {
    if y <= lo || y >= hi {
        return 0.0;
    }
    let s = 2.0 * (y - lo) / (hi - lo) - 1.0;
    (-1.0 / (1.0 - s * s)).exp()
}

impl Profile {
    pub fn eval(&self, y: &[f64]) -> Complex<f64> {
        let re = match self {
            Profile::Gaussian { center, width } => {
                let r2: f64 = y.iter().enumerate().map(|(i, v)| (v - if i == 0 { *center } else { 0.0 }).powi(2)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            Profile::Bump { lo, hi } => bump(y[0], *lo, *hi) * y[1..].iter().map(|v| (-v * v / 2.0).exp()).product::<f64>(),
            Profile::Split { left, right, right_weight } => {
                let l = bump(y[0], left.0, left.1) * (1.0 - right_weight).sqrt();
                let r = bump(y[0], right.0, right.1) * right_weight.sqrt();
                (l + r) * y[1..].iter().map(|v| (-v * v / 2.0).exp()).product::<f64>()
            }
            Profile::Field(f) => f.value(y),
            Profile::Sampled { y0, dy, re, im } => {
                let s = (y[0] - y0) / dy;
                if s < 0.0 || s > (re.len() - 1) as f64 {
                    return Complex::new(0.0, 0.0);
                }
                let k = (s.floor() as usize).min(re.len().saturating_sub(2));
                let w = s - k as f64;
                let at = |v: &[f64]| v[k] * (1.0 - w) + v.get(k + 1).copied().unwrap_or(0.0) * w;
                return Complex::new(at(re), at(im));
            }
        };
        Complex::new(re, 0.0)
    }

    /// Mass fraction of `|a|^2` on `y1 > 0` by quadrature, for 1-D profiles.
    pub fn right_mass(&self) -> f64 {
        let (n, lim) = (200_000, 64.0);
        let h = 2.0 * lim / n as f64;
        let (mut right, mut total) = (0.0, 0.0);
        for j in 0..n {
            let y = -lim + (j as f64 + 0.5) * h;
            let m = self.eval(&[y]).norm_sqr();
            total += m;
            if y > 0.0 {
                right += m;
            }
        }
        right / total
    }

    /// Profile with a prescribed right-mass fraction built from two bumps,
    /// `[lo, hi]` on the right and its mirror image on the left.
    pub fn split(lo: f64, hi: f64, right_weight: f64) -> Self {
        Profile::Split { left: (-hi, -lo), right: (lo, hi), right_weight }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction<T> {
    pub grid: GridSpec,
    pub eps: f64,
    pub values: Vec<Complex<T>>,
    pub t: f64,
}

impl<T: Real> WaveFunction<T> {
    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|c| c.norm_sqr().as_f64()).sum::<f64>() * self.grid.cell()).sqrt()
    }

    pub fn normalize(&mut self) {
        let n = T::lit(self.norm());
        for v in &mut self.values {
            *v = *v / n;
        }
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm_sqr().as_f64()).collect()
    }

    pub fn boundary_mass(&self) -> f64 {
        let cell = self.grid.cell();
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.in_guard_band(*i))
            .map(|(_, c)| c.norm_sqr().as_f64() * cell)
            .sum()
    }

    /// `int |Psi|^2` over the points satisfying `keep`.
    pub fn mass_where(&self, keep: impl Fn(&[f64]) -> bool) -> f64 {
        let cell = self.grid.cell();
        (0..self.values.len())
            .filter(|&i| keep(&self.grid.point(i)))
            .map(|i| self.values[i].norm_sqr().as_f64() * cell)
            .sum()
    }

    /// `sqrt(sum |a - b|^2 dx^d)`.
    pub fn distance(&self, other: &Self) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (*a - *b).norm_sqr().as_f64()).sum();
        (s * self.grid.cell()).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.grid.d == 1 { "x,re,im\n" } else { "x1,x2,re,im\n" });
        for (i, c) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            for v in &p {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{}\n", c.re, c.im));
        }
        out
    }
}

/// `eps^{-d/4} a((x - x0)/sqrt eps) exp(i xi0.(x - x0)/eps)`, normalized on the grid.
pub fn init_concentrated_state<T: Real>(
    grid: GridSpec,
    eps: f64,
    profile: &Profile,
    x0: &[f64],
    xi0: &[f64],
) -> Result<WaveFunction<T>, QuantumError> {
    if x0.len() != grid.d || xi0.len() != grid.d {
        return Err(QuantumError::DimensionMismatch(x0.len(), grid.d));
    }
    let se = eps.sqrt();
    let amp = eps.powf(-(grid.d as f64) / 4.0);
    let values = (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let y: Vec<f64> = x.iter().zip(x0).map(|(a, b)| (a - b) / se).collect();
            let phase: f64 = x.iter().zip(x0).zip(xi0).map(|((a, b), k)| k * (a - b)).sum::<f64>() / eps;
            let c = profile.eval(&y) * amp * Complex::from_polar(1.0, phase);
            Complex::new(T::lit(c.re), T::lit(c.im))
        })
        .collect();
    let mut psi = WaveFunction { grid, eps, values, t: 0.0 };
    let total = psi.norm();
    let clipped = psi.boundary_mass() / (total * total);
    if clipped > 1e-12 {
        return Err(QuantumError::ProfileClipped(clipped));
    }
    psi.normalize();
    Ok(psi)
}

/// In-place FFTs over one or both axes of a row-major array.
struct Spectral<T: Real> {
    n: usize,
    d: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Spectral<T> {
    fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self { n: grid.n, d: grid.d, fwd: planner.plan_fft_forward(grid.n), inv: planner.plan_fft_inverse(grid.n) }
    }

    fn apply(&self, data: &mut [Complex<T>], forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        fft.process(data);
        if self.d == 2 {
            let n = self.n;
            let mut col = vec![Complex::new(T::zero(), T::zero()); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
        if !forward {
            let s = T::one() / T::lit(self.n.pow(self.d as u32) as f64);
            for v in data.iter_mut() {
                *v = *v * s;
            }
        }
    }

    fn forward(&self, data: &mut [Complex<T>]) {
        self.apply(data, true);
    }

    fn inverse(&self, data: &mut [Complex<T>]) {
        self.apply(data, false);
    }
}

/// `|k|^2` for every flat index, in FFT order.
fn k_squared(grid: &GridSpec) -> Vec<f64> {
    let k = grid.wavenumbers();
    match grid.d {
        1 => k.iter().map(|v| v * v).collect(),
        _ => (0..grid.len()).map(|i| k[i / grid.n].powi(2) + k[i % grid.n].powi(2)).collect(),
    }
}

/// Potential sampled on the grid.
pub fn sample_potential(grid: &GridSpec, pot: &ConicalPotential) -> Result<Vec<f64>, QuantumError> {
    if pot.dim() != grid.d {
        return Err(QuantumError::DimensionMismatch(pot.dim(), grid.d));
    }
    Ok((0..grid.len()).map(|i| pot.eval(&grid.point(i))).collect())
}

/// Strang splitting with fixed `(grid, eps, V, dt)`: half potential phase,
/// full kinetic multiplier, half potential phase.
pub struct Propagator<T: Real> {
    grid: GridSpec,
    eps: f64,
    dt: f64,
    half_v: Vec<Complex<T>>,
    kinetic: Vec<Complex<T>>,
    spectral: Spectral<T>,
}

impl<T: Real> Propagator<T> {
    pub fn new(grid: GridSpec, eps: f64, pot: &ConicalPotential, dt: f64) -> Result<Self, QuantumError> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(QuantumError::BadTimeStep);
        }
        let v = sample_potential(&grid, pot)?;
        Ok(Self::from_samples(grid, eps, &v, dt))
    }

    pub fn from_samples(grid: GridSpec, eps: f64, v: &[f64], dt: f64) -> Self {
        let phase = |a: f64| {
            let c = Complex::from_polar(1.0, a);
            Complex::new(T::lit(c.re), T::lit(c.im))
        };
        let half_v = v.iter().map(|&v| phase(-v * dt / (2.0 * eps))).collect();
        let kinetic = k_squared(&grid).iter().map(|&k2| phase(-eps * k2 * dt / 2.0)).collect();
        Self { grid, eps, dt, half_v, kinetic, spectral: Spectral::new(&grid) }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Replaces the sampled potential, keeping grid, `eps` and `dt`.
    pub fn set_potential(&mut self, v: &[f64]) {
        let (dt, eps) = (self.dt, self.eps);
        for (h, &v) in self.half_v.iter_mut().zip(v) {
            let c = Complex::from_polar(1.0, -v * dt / (2.0 * eps));
            *h = Complex::new(T::lit(c.re), T::lit(c.im));
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn step(&self, psi: &mut WaveFunction<T>) {
        debug_assert_eq!(psi.grid, self.grid);
        for (v, p) in psi.values.iter_mut().zip(&self.half_v) {
            *v = *v * *p;
        }
        self.spectral.forward(&mut psi.values);
        for (v, k) in psi.values.iter_mut().zip(&self.kinetic) {
            *v = *v * *k;
        }
        self.spectral.inverse(&mut psi.values);
        for (v, p) in psi.values.iter_mut().zip(&self.half_v) {
            *v = *v * *p;
        }
        psi.t += self.dt;
    }

    /// Steps to `t_end` (`round((t_end - t)/dt)` steps), copying the state at
    /// the step nearest each snapshot time. Fails as soon as the guard band
    /// holds more than [`BOUNDARY_MASS_TOL`].
    pub fn propagate(
        &self,
        psi: &mut WaveFunction<T>,
        t_end: f64,
        snapshot_times: &[f64],
    ) -> Result<Vec<WaveFunction<T>>, QuantumError> {
        let t0 = psi.t;
        let steps = ((t_end - t0) / self.dt).round().max(0.0) as usize;
        let index = |t: f64| ((t - t0) / self.dt).round().max(0.0) as usize;
        let mut wanted: Vec<(usize, usize)> = snapshot_times.iter().enumerate().map(|(k, &t)| (index(t), k)).collect();
        wanted.sort();
        let mut out: Vec<Option<WaveFunction<T>>> = vec![None; snapshot_times.len()];
        let mut next = 0;
        for s in 0..=steps {
            if s > 0 {
                self.step(psi);
                let b = psi.boundary_mass();
                if b > BOUNDARY_MASS_TOL {
                    return Err(QuantumError::BoundaryMassExceeded { t: psi.t, mass: b });
                }
            }
            while next < wanted.len() && wanted[next].0 == s {
                out[wanted[next].1] = Some(psi.clone());
                next += 1;
            }
        }
        // Snapshot times beyond the horizon get the final state.
        Ok(out.into_iter().map(|o| o.unwrap_or_else(|| psi.clone())).collect())
    }
}

/// One Strang step; builds the multipliers on every call, so prefer [`Propagator`] in loops.
pub fn step_strang<T: Real>(psi: &mut WaveFunction<T>, pot: &ConicalPotential, dt: f64) -> Result<(), QuantumError> {
    Propagator::new(psi.grid, psi.eps, pot, dt)?.step(psi);
    Ok(())
}

pub fn propagate<T: Real>(
    psi: &mut WaveFunction<T>,
    pot: &ConicalPotential,
    t_end: f64,
    dt: f64,
    snapshot_times: &[f64],
) -> Result<Vec<WaveFunction<T>>, QuantumError> {
    let dt = if t_end < psi.t { -dt.abs() } else { dt.abs() };
    Propagator::new(psi.grid, psi.eps, pot, dt)?.propagate(psi, t_end, snapshot_times)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observables {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub position_variance: f64,
}

/// `<x>`, `<-i eps grad>` (spectral) and `<|x - <x>|^2>`.
pub fn observables<T: Real>(psi: &WaveFunction<T>) -> Observables {
    let grid = &psi.grid;
    let rho = psi.density();
    let total: f64 = rho.iter().sum();
    let mut position = vec![0.0; grid.d];
    for (i, r) in rho.iter().enumerate() {
        for (a, x) in grid.point(i).iter().enumerate() {
            position[a] += x * r / total;
        }
    }
    let position_variance = rho
        .iter()
        .enumerate()
        .map(|(i, r)| grid.point(i).iter().zip(&position).map(|(x, m)| (x - m).powi(2)).sum::<f64>() * r / total)
        .sum();
    let mut hat = psi.values.clone();
    Spectral::new(grid).forward(&mut hat);
    let k = grid.wavenumbers();
    let pw: Vec<f64> = hat.iter().map(|c| c.norm_sqr().as_f64()).collect();
    let ptotal: f64 = pw.iter().sum();
    let mut momentum = vec![0.0; grid.d];
    for (i, w) in pw.iter().enumerate() {
        let ks = if grid.d == 1 { vec![k[i]] } else { vec![k[i / grid.n], k[i % grid.n]] };
        for (a, kv) in ks.iter().enumerate() {
            momentum[a] += psi.eps * kv * w / ptotal;
        }
    }
    Observables { position, momentum, position_variance }
}

/// `<Psi, H Psi>` with `H = -eps^2/2 Lap + V`, for `V` sampled on the grid.
pub fn energy<T: Real>(psi: &WaveFunction<T>, v: &[f64]) -> f64 {
    let mut hat = psi.values.clone();
    Spectral::new(&psi.grid).forward(&mut hat);
    let n_total = psi.grid.len() as f64;
    // Parseval: sum |Psi|^2 = sum |hat|^2 / N^d.
    let kin: f64 = hat.iter().zip(k_squared(&psi.grid)).map(|(c, k2)| c.norm_sqr().as_f64() * k2).sum::<f64>() / n_total;
    let pot: f64 = psi.values.iter().zip(v).map(|(c, v)| c.norm_sqr().as_f64() * v).sum();
    (0.5 * psi.eps * psi.eps * kin + pot) * psi.grid.cell()
}

/// Free evolution of the normalized Gaussian `exp(-(x-x0)^2/(2 s^2 eps) + i p0 (x-x0)/eps)`
/// in one dimension, closed form.
pub fn free_gaussian(x: f64, t: f64, eps: f64, x0: f64, p0: f64, s: f64) -> Complex<f64> {
    let i = Complex::new(0.0, 1.0);
    // Complex width a(t) = s^2 + i t, in units of eps.
    let a = Complex::new(s * s, t);
    let xc = x - x0 - p0 * t;
    let norm = (eps * PI * s * s).powf(-0.25) * (s * s / a).sqrt();
    let phase = (i * (p0 * (x - x0) - p0 * p0 * t / 2.0) / eps).exp();
    norm * (-(xc * xc) / (2.0 * eps * a)).exp() * phase
}
