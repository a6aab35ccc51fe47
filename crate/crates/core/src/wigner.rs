//! Phase-space diagnostics on 1-D wave functions: the Wigner transform, observable
//! pairing, peak tracking, the three-zone mass split and the directional weights.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::potential::ConicalPotential;
use crate::quantum::WaveFunction;
use crate::scalar::Real;

pub const DEFAULT_SUBSAMPLE: usize = 16;
/// Peak window half-width in units of `sqrt(eps)`.
pub const PEAK_WINDOW: f64 = 5.0;
/// Minimum separation, in units of `sqrt(eps)`, for a second peak to count.
pub const PEAK_SEPARATION: f64 = 10.0;
pub const SECOND_PEAK_RATIO: f64 = 0.5;
pub const NU_WINDOW_EXPONENT: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WignerError {
    #[error("Wigner diagnostics need d = 1 (got {0})")]
    NotOneDimensional(usize),
    #[error("directional weights need codimension 1 (got {0})")]
    Codim(usize),
    #[error("snapshots do not share grid and eps")]
    Mismatch,
    #[error("eps R = {eps_r} must be below delta = {delta}")]
    ScaleOrderViolation { eps_r: f64, delta: f64 },
}

/// `W(x, xi)` on a subsampled x-grid; values row-major with `xi` fastest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WignerField {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub values: Vec<f64>,
    pub eps: f64,
    pub t: f64,
}

/// `W(x, xi) = (2 pi eps)^{-1} int e^{i y xi/eps} Psi(x - y/2) conj Psi(x + y/2) dy`
/// with `y = 2 m dx`, one FFT per retained x-point. The xi-grid has spacing
/// `pi eps / (N dx)` and covers half the momentum range of the x-grid.
pub fn wigner_transform<T: Real>(psi: &WaveFunction<T>, x_subsample: usize) -> Result<WignerField, WignerError> {
    if psi.grid.d != 1 {
        return Err(WignerError::NotOneDimensional(psi.grid.d));
    }
    let n = psi.grid.n;
    let dx = psi.grid.dx();
    let eps = psi.eps;
    let step = x_subsample.max(1);
    let vals: Vec<Complex<f64>> = psi.values.iter().map(|c| Complex::new(c.re.as_f64(), c.im.as_f64())).collect();
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let axis = psi.grid.axis();
    let dxi = std::f64::consts::PI * eps / (n as f64 * dx);
    let half = n / 2;
    let xi: Vec<f64> = (0..n).map(|k| (k as f64 - half as f64) * dxi).collect();
    let rows: Vec<usize> = (0..n).step_by(step).collect();
    let mut values = Vec::with_capacity(rows.len() * n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let scale = dx / (std::f64::consts::PI * eps);
    for &j in &rows {
        for (m, b) in buf.iter_mut().enumerate() {
            // Slot m holds the signed shift m (or m - N). Psi is zero off the grid,
            // so shifts that leave it contribute nothing (no periodic ghosts).
            let s = if m < half { m as i64 } else { m as i64 - n as i64 };
            let (a, c) = (j as i64 - s, j as i64 + s);
            *b = if a < 0 || c < 0 || a >= n as i64 || c >= n as i64 {
                Complex::new(0.0, 0.0)
            } else {
                vals[a as usize] * vals[c as usize].conj()
            };
        }
        fft.process(&mut buf);
        // fftshift so that xi increases along the row.
        values.extend((0..n).map(|k| buf[(k + half) % n].re * scale));
    }
    Ok(WignerField { x: rows.iter().map(|&j| axis[j]).collect(), xi, values, eps, t: psi.t })
}

impl WignerField {
    pub fn dx(&self) -> f64 {
        if self.x.len() > 1 {
            self.x[1] - self.x[0]
        } else {
            0.0
        }
    }

    pub fn dxi(&self) -> f64 {
        self.xi[1] - self.xi[0]
    }

    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.xi.len() + k]
    }

    /// `int W dxi` at each retained x.
    pub fn x_marginal(&self) -> Vec<f64> {
        let m = self.xi.len();
        (0..self.x.len()).map(|i| self.values[i * m..(i + 1) * m].iter().sum::<f64>() * self.dxi()).collect()
    }

    /// `int W dx` at each xi (Riemann sum over the retained x).
    pub fn xi_marginal(&self) -> Vec<f64> {
        let m = self.xi.len();
        let mut out = vec![0.0; m];
        for i in 0..self.x.len() {
            for (o, w) in out.iter_mut().zip(&self.values[i * m..(i + 1) * m]) {
                *o += w * self.dx();
            }
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dxi()
    }

    /// `<W, a>` on the grid.
    pub fn pair(&self, a: impl Fn(f64, f64) -> f64) -> f64 {
        let m = self.xi.len();
        let mut acc = 0.0;
        for (i, &x) in self.x.iter().enumerate() {
            for (k, &xi) in self.xi.iter().enumerate() {
                let w = self.values[i * m + k];
                if w != 0.0 {
                    acc += w * a(x, xi);
                }
            }
        }
        acc * self.dx() * self.dxi()
    }

    /// Box sums of `W dx dxi` over `|x - x_i| <= hx`, `|xi - xi_k| <= hxi`.
    fn box_sums(&self, hx: f64, hxi: f64) -> Vec<f64> {
        let (nx, m) = (self.x.len(), self.xi.len());
        let rx = (hx / self.dx()).floor() as usize;
        let rk = (hxi / self.dxi()).floor() as usize;
        let cell = self.dx() * self.dxi();
        // Prefix sums along xi, then along x.
        let mut along = vec![0.0; nx * m];
        for i in 0..nx {
            let mut pre = vec![0.0; m + 1];
            for k in 0..m {
                pre[k + 1] = pre[k] + self.values[i * m + k];
            }
            for k in 0..m {
                let (lo, hi) = (k.saturating_sub(rk), (k + rk + 1).min(m));
                along[i * m + k] = pre[hi] - pre[lo];
            }
        }
        let mut out = vec![0.0; nx * m];
        for k in 0..m {
            let mut pre = vec![0.0; nx + 1];
            for i in 0..nx {
                pre[i + 1] = pre[i] + along[i * m + k];
            }
            for i in 0..nx {
                let (lo, hi) = (i.saturating_sub(rx), (i + rx + 1).min(nx));
                out[i * m + k] = (pre[hi] - pre[lo]) * cell;
            }
        }
        out
    }

    /// Peak of `W` averaged over `sqrt(eps)` boxes, restricted to `keep`.
    pub fn peak_where(&self, keep: impl Fn(f64, f64) -> bool) -> Option<Peak> {
        self.peaks(keep).map(|(p, _)| p)
    }

    fn peaks(&self, keep: impl Fn(f64, f64) -> bool) -> Option<(Peak, Option<Peak>)> {
        let se = self.eps.sqrt();
        let m = self.xi.len();
        let smooth = self.box_sums(se, se);
        let ok = |i: usize, k: usize| keep(self.x[i], self.xi[k]);
        let mut best: Option<(usize, usize)> = None;
        for i in 0..self.x.len() {
            for k in 0..m {
                if ok(i, k) && best.is_none_or(|(a, b)| smooth[i * m + k] > smooth[a * m + b]) {
                    best = Some((i, k));
                }
            }
        }
        let (bi, bk) = best?;
        let top = smooth[bi * m + bk];
        let window = self.box_sums(PEAK_WINDOW * se, PEAK_WINDOW * se);
        let make = |i: usize, k: usize| self.refine(i, k, window[i * m + k], &keep);
        // Strongest separated local maximum of the smoothed field.
        let mut second: Option<(usize, usize)> = None;
        for i in 0..self.x.len() {
            for k in 0..m {
                let v = smooth[i * m + k];
                if !ok(i, k) || v < SECOND_PEAK_RATIO * top {
                    continue;
                }
                let far = (self.x[i] - self.x[bi]).hypot(self.xi[k] - self.xi[bk]) > PEAK_SEPARATION * se;
                let local = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().all(|(di, dk)| {
                    let (a, b) = (i as i64 + di, k as i64 + dk);
                    if a < 0 || b < 0 || a >= self.x.len() as i64 || b >= m as i64 {
                        return true;
                    }
                    smooth[a as usize * m + b as usize] <= v
                });
                if far && local && second.is_none_or(|(a, b)| v > smooth[a * m + b]) {
                    second = Some((i, k));
                }
            }
        }
        Some((make(bi, bk), second.map(|(i, k)| make(i, k))))
    }

    /// `W`-weighted centroid within the peak window around grid point `(i, k)`,
    /// over the points allowed by `keep`.
    fn refine(&self, i: usize, k: usize, mass: f64, keep: &impl Fn(f64, f64) -> bool) -> Peak {
        let h = PEAK_WINDOW * self.eps.sqrt();
        let m = self.xi.len();
        let (mut sw, mut sx, mut sk) = (0.0, 0.0, 0.0);
        for (a, &x) in self.x.iter().enumerate() {
            if (x - self.x[i]).abs() > h {
                continue;
            }
            for (b, &xi) in self.xi.iter().enumerate() {
                if (xi - self.xi[k]).abs() <= h && keep(x, xi) {
                    let w = self.values[a * m + b];
                    sw += w;
                    sx += w * x;
                    sk += w * xi;
                }
            }
        }
        let (x, xi) = if sw > 0.0 { (sx / sw, sk / sw) } else { (self.x[i], self.xi[k]) };
        Peak { x, xi, x_grid: self.x[i], xi_grid: self.xi[k], mass }
    }

    /// Flat CSV `x,xi,W`.
    /// Restriction to a box, thinned so that each axis keeps at most `max_points`.
    pub fn crop(&self, x: (f64, f64), xi: (f64, f64), max_points: usize) -> WignerField {
        let pick = |axis: &[f64], (lo, hi): (f64, f64)| -> Vec<usize> {
            let inside: Vec<usize> = (0..axis.len()).filter(|&i| axis[i] >= lo && axis[i] <= hi).collect();
            let stride = inside.len().div_ceil(max_points.max(1)).max(1);
            inside.into_iter().step_by(stride).collect()
        };
        let (rows, cols) = (pick(&self.x, x), pick(&self.xi, xi));
        let values = rows.iter().flat_map(|&i| cols.iter().map(move |&k| (i, k))).map(|(i, k)| self.at(i, k)).collect();
        WignerField {
            x: rows.iter().map(|&i| self.x[i]).collect(),
            xi: cols.iter().map(|&k| self.xi[k]).collect(),
            values,
            eps: self.eps,
            t: self.t,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,xi,W\n");
        let m = self.xi.len();
        for (i, x) in self.x.iter().enumerate() {
            for (k, xi) in self.xi.iter().enumerate() {
                out.push_str(&format!("{x:e},{xi:e},{:e}\n", self.values[i * m + k]));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Peak {
    /// Centroid of `W` in the peak window.
    pub x: f64,
    pub xi: f64,
    /// Grid location of the smoothed maximum.
    pub x_grid: f64,
    pub xi_grid: f64,
    /// `int W` over the window of half-width `5 sqrt(eps)` around the grid location.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeakRecord {
    pub t: f64,
    pub peak: Peak,
    /// Set when a second peak of at least half the height sits more than `10 sqrt(eps)` away.
    pub multi_peak: bool,
    pub second: Option<Peak>,
}

/// `<W^eps Psi, a>` on a Wigner grid subsampled by [`DEFAULT_SUBSAMPLE`].
pub fn pair_observable<T: Real>(psi: &WaveFunction<T>, a: impl Fn(f64, f64) -> f64) -> Result<f64, WignerError> {
    Ok(wigner_transform(psi, DEFAULT_SUBSAMPLE)?.pair(a))
}

pub fn peak_track<T: Real>(snapshots: &[WaveFunction<T>]) -> Result<Vec<PeakRecord>, WignerError> {
    if let Some(first) = snapshots.first() {
        if snapshots.iter().any(|s| s.grid != first.grid || s.eps != first.eps) {
            return Err(WignerError::Mismatch);
        }
    }
    snapshots
        .iter()
        .map(|psi| {
            let w = wigner_transform(psi, DEFAULT_SUBSAMPLE)?;
            let (peak, second) = w.peaks(|_, _| true).expect("nonempty grid");
            Ok(PeakRecord { t: psi.t, peak, multi_peak: second.is_some(), second })
        })
        .collect()
}

/// Quintic smoothstep cut: 1 on `|s| < 1/2`, 0 on `|s| >= 1`.
pub fn cut(s: f64) -> f64 {
    let s = s.abs();
    if s <= 0.5 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    let u = 2.0 * (1.0 - s);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZoneMasses {
    pub r: f64,
    pub delta: f64,
    pub inner: f64,
    pub middle: f64,
    pub outer: f64,
}

/// Normalized masses under `chi(x'/(eps R))`, `chi(x'/delta) - chi(x'/(eps R))`
/// and `1 - chi(x'/delta)`, with `x' = |g(x)|`.
pub fn zone_masses<T: Real>(psi: &WaveFunction<T>, pot: &ConicalPotential, r: f64, delta: f64) -> Result<ZoneMasses, WignerError> {
    let eps_r = psi.eps * r;
    if eps_r >= delta {
        return Err(WignerError::ScaleOrderViolation { eps_r, delta });
    }
    let rho = psi.density();
    let total: f64 = rho.iter().sum();
    let (mut inner, mut mid) = (0.0, 0.0);
    for (i, p) in rho.iter().enumerate() {
        let xp = pot.g_norm(&psi.grid.point(i));
        let (c1, c2) = (cut(xp / eps_r), cut(xp / delta));
        inner += c1 * p;
        mid += (c2 - c1) * p;
    }
    let (inner, middle) = (inner / total, mid / total);
    Ok(ZoneMasses { r, delta, inner, middle, outer: 1.0 - inner - middle })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmpiricalNu {
    pub window: f64,
    pub plus: f64,
    pub minus: f64,
}

/// Normalized mass in `0 < +/- g(x) < w`.
pub fn empirical_nu<T: Real>(psi: &WaveFunction<T>, pot: &ConicalPotential, window: f64) -> Result<EmpiricalNu, WignerError> {
    if pot.codim() != 1 {
        return Err(WignerError::Codim(pot.codim()));
    }
    let rho = psi.density();
    let total: f64 = rho.iter().sum();
    let (mut plus, mut minus) = (0.0, 0.0);
    for (i, p) in rho.iter().enumerate() {
        let g = pot.g_value(&psi.grid.point(i))[0];
        if g > 0.0 && g < window {
            plus += p;
        } else if g < 0.0 && -g < window {
            minus += p;
        }
    }
    Ok(EmpiricalNu { window, plus: plus / total, minus: minus / total })
}

/// `eps^0.4`, between the operator scale `eps` and the packet width `sqrt(eps)`.
pub fn nu_window(eps: f64) -> f64 {
    eps.powf(NU_WINDOW_EXPONENT)
}
