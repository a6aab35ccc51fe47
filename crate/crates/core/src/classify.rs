//! Classification of singular points: the branch equation
//! `rho = -d_rho V_S - F t(grad g) grad g rho / |grad g rho|`, its zero roots,
//! the mean-direction test and the directional measure for codimension one.
//!
//! Writing `w = grad g rho / |grad g rho|` and `lambda = |grad g rho|`, the branch
//! equation becomes `(F D_g + lambda) w = -grad g grad V_S` with `|w| = 1` and
//! `lambda > 0`, which is solved exhaustively in the eigenbasis of `F D_g`.

use num_traits::{Num, Signed};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::Mat;
use crate::potential::{ConicalPotential, PotentialError, SingularGeometry};
use crate::scalar::{dot, norm, scale, Real};

/// Absolute tolerance on `op_norm - |d_rho V_S|` for the critical regime.
pub const CRITICAL_TOL: f64 = 1e-9;
/// Distance under which two roots are the same root.
pub const DEDUP_TOL: f64 = 1e-6;
pub const SPHERE_SAMPLES: usize = 256;
pub const MANIFOLD_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("shape function vanishes at the point; the mean direction is undefined")]
    ZeroShapeOperator,
    #[error("operation needs codimension 1, got {0}")]
    DimensionMismatch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Label {
    NoContact,
    BranchesExist,
    ZeroRootsOnly,
    MixedRoots,
    MassForbidden,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchRoots<T> {
    /// Ambient normal vectors `rho0`.
    pub nonzero_roots: Vec<Vec<T>>,
    /// Unit vectors `omega` in constraint coordinates.
    pub zero_root_directions: Vec<Vec<T>>,
    /// Samples of a continuum of nonzero roots, when one exists.
    pub root_manifold_samples: Option<Vec<Vec<T>>>,
}

impl<T> BranchRoots<T> {
    pub fn is_empty(&self) -> bool {
        self.nonzero_roots.is_empty()
            && self.zero_root_directions.is_empty()
            && self.root_manifold_samples.as_ref().is_none_or(Vec::is_empty)
    }

    pub fn has_nonzero(&self) -> bool {
        !self.nonzero_roots.is_empty() || self.root_manifold_samples.as_ref().is_some_and(|s| !s.is_empty())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SphereAtoms<T> {
    /// `(direction, weight)` pairs; directions are unit vectors in constraint coordinates.
    pub atoms: Vec<(Vec<T>, T)>,
    pub total_mass: T,
}

impl<T: Real> SphereAtoms<T> {
    pub fn zero() -> Self {
        Self { atoms: Vec::new(), total_mass: T::zero() }
    }

    pub fn weight(&self, direction: &[T]) -> T {
        self.atoms
            .iter()
            .filter(|(d, _)| d.iter().zip(direction).all(|(a, b)| (*a - *b).abs() <= T::tol(1e-12)))
            .map(|(_, w)| *w)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "D")]
pub enum MeanDirection<T> {
    Feasible(Vec<T>),
    Infeasible(Vec<T>),
}

impl<T> MeanDirection<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, MeanDirection::Feasible(_))
    }

    pub fn vector(&self) -> &[T] {
        match self {
            MeanDirection::Feasible(v) | MeanDirection::Infeasible(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport<T> {
    pub geometry: SingularGeometry<T>,
    pub regime: Regime,
    pub roots: BranchRoots<T>,
    pub nu_feasible: bool,
    /// `None` when the shape function vanishes at the point.
    pub mean_direction: Option<MeanDirection<T>>,
    pub label: Label,
    pub notes: Vec<String>,
}

/// Roots of the branch equation when p = 1, in the scalar normal coordinate.
///
/// With `n` the unit normal `grad g / |grad g|`, `a = d_rho V_S . n` and
/// `f = F |grad g|`, the equation reads `r = -a - f sign(r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarRoots<Q> {
    pub nonzero: Vec<Q>,
    /// Signs `+1` / `-1` of the zero-root directions.
    pub zero_directions: Vec<i8>,
}

/// Exhaustive sign enumeration; exact for rational `Q`.
pub fn branch_roots_scalar<Q>(a: Q, f: Q) -> ScalarRoots<Q>
where
    Q: Num + Signed + Clone + PartialOrd,
{
    let mut nonzero = Vec::new();
    let mut zero_directions = Vec::new();
    for s in [1i8, -1] {
        let sq = if s > 0 { Q::one() } else { -Q::one() };
        let r = -a.clone() - f.clone() * sq.clone();
        if !r.is_zero() && r.signum() == sq {
            nonzero.push(r);
        }
        if (a.clone() + f.clone() * sq).is_zero() && !f.is_zero() {
            zero_directions.push(s);
        }
    }
    ScalarRoots { nonzero, zero_directions }
}

/// Weights `(nu_plus, nu_minus)` of total `mass` solving the asymmetry condition on `{+1, -1}`.
///
/// Returns `None` when no nonnegative solution exists. With `f = 0` the
/// condition is solvable only for `a = 0`, where it does not fix the split and
/// the symmetric one is returned.
pub fn nu_scalar<Q>(a: Q, f: Q, mass: Q) -> Option<(Q, Q)>
where
    Q: Num + Signed + Clone + PartialOrd,
{
    let two = Q::one() + Q::one();
    if f.is_zero() {
        return a.is_zero().then(|| (mass.clone() / two.clone(), mass / two));
    }
    let plus = mass.clone() * (f.clone() - a.clone()) / (two.clone() * f.clone());
    let minus = mass * (f.clone() + a) / (two * f);
    (!plus.is_negative() && !minus.is_negative()).then_some((plus, minus))
}

/// Scalar data `(a, f, |grad g|)` of a codimension-one geometry.
pub fn scalar_data<T: Real>(geom: &SingularGeometry<T>) -> Result<(T, T, T), ClassifyError> {
    if geom.codim() != 1 {
        return Err(ClassifyError::DimensionMismatch(geom.codim()));
    }
    let gamma = norm(geom.grad_g.row(0));
    let a = dot(&geom.normal_grad_vs, geom.grad_g.row(0)) / gamma;
    Ok((a, geom.f_sigma * gamma, gamma))
}

pub fn regime<T: Real>(geom: &SingularGeometry<T>) -> Regime {
    let diff = geom.op_norm - geom.norm_normal_grad;
    if diff.abs() <= T::tol(CRITICAL_TOL) {
        Regime::Critical
    } else if diff < T::zero() {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    }
}

/// `rho0 = -d_rho V_S - F t(grad g) w` for a unit constraint-space vector `w`.
fn rho_from_w<T: Real>(geom: &SingularGeometry<T>, w: &[T]) -> Vec<T> {
    let back = geom.apply_grad_g_t(w);
    (0..geom.dim()).map(|i| -geom.normal_grad_vs[i] - geom.f_sigma * back[i]).collect()
}

fn push_unique<T: Real>(list: &mut Vec<Vec<T>>, v: Vec<T>) {
    let scale_ = T::one().max(norm(&v));
    if !list.iter().any(|u| norm(&crate::scalar::sub(u, &v)) <= T::tol(DEDUP_TOL) * scale_) {
        list.push(v);
    }
}

/// Bisection for a sign change of `f` on `(lo, hi)`, `f(lo)` having sign `s_lo`.
fn bisect<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, lo_positive: bool) -> T {
    let two = T::lit(2.0);
    for _ in 0..400 {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > T::zero()) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / two
}

/// Positive roots of `sum c_i / (m_i + lambda)^2 = 1` for `c_i > 0`.
fn secular_roots<T: Real>(m: &[T], c: &[T]) -> Vec<T> {
    let phi = |l: T| m.iter().zip(c).map(|(&mi, &ci)| ci / ((mi + l) * (mi + l))).sum::<T>() - T::one();
    let dphi = |l: T| -T::lit(2.0) * m.iter().zip(c).map(|(&mi, &ci)| ci / ((mi + l) * (mi + l) * (mi + l))).sum::<T>();
    let pole_tol = T::tol(1e-14);
    let mut poles: Vec<T> = m.iter().map(|&mi| -mi).filter(|&p| p > pole_tol).collect();
    poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    poles.dedup_by(|a, b| (*a - *b).abs() <= pole_tol);
    let zero_is_pole = m.iter().any(|&mi| mi.abs() <= pole_tol);
    let upper = poles.last().copied().unwrap_or(T::zero()) + c.iter().copied().sum::<T>().sqrt() + T::one();

    let mut bounds = vec![T::zero()];
    bounds.extend(poles.iter().copied());
    let mut roots = Vec::new();
    for k in 0..bounds.len() {
        let lo = bounds[k];
        let lo_pole = k > 0 || zero_is_pole;
        let last = k + 1 == bounds.len();
        let lo_positive = lo_pole || phi(lo) > T::zero();
        if last {
            // Beyond every pole phi decreases monotonically to -1.
            if lo_positive {
                roots.push(bisect(phi, lo, upper, true));
            }
            continue;
        }
        let hi = bounds[k + 1];
        if !lo_pole && dphi(lo) >= T::zero() {
            if phi(lo) < T::zero() {
                roots.push(bisect(phi, lo, hi, false));
            }
            continue;
        }
        // phi is convex on (lo, hi): locate its minimum from the monotone derivative.
        let lm = bisect(dphi, lo, hi, false);
        let pm = phi(lm);
        if pm.abs() <= T::tol(1e-12) {
            roots.push(lm);
        } else if pm < T::zero() {
            if lo_positive {
                roots.push(bisect(phi, lo, lm, true));
            }
            roots.push(bisect(phi, lm, hi, false));
        }
    }
    roots.retain(|&l| l > T::tol(1e-13));
    roots
}

/// Unit vectors spread over the sphere spanned by orthonormal `basis`.
fn sphere_points<T: Real>(basis: &[Vec<T>], count: usize) -> Vec<Vec<T>> {
    let dim = basis[0].len();
    let combine = |coef: &[T]| -> Vec<T> {
        (0..dim).map(|i| coef.iter().zip(basis).map(|(&c, b)| c * b[i]).sum()).collect()
    };
    match basis.len() {
        1 => vec![basis[0].clone(), scale(-T::one(), &basis[0])],
        2 => (0..count)
            .map(|j| {
                let th = T::lit(2.0 * std::f64::consts::PI * j as f64 / count as f64);
                combine(&[th.cos(), th.sin()])
            })
            .collect(),
        _ => fibonacci_sphere(count).into_iter().map(|p| combine(&from_f64(&p[..basis.len().min(3)]))).collect(),
    }
}

fn from_f64<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..count)
        .map(|j| {
            let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * j as f64;
            [r * th.cos(), r * th.sin(), z]
        })
        .collect()
}

/// Quasi-uniform directions on `S^{p-1}` in constraint coordinates.
pub fn sphere_directions<T: Real>(p: usize, count: usize) -> Vec<Vec<T>> {
    let basis: Vec<Vec<T>> = (0..p)
        .map(|i| (0..p).map(|j| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    sphere_points(&basis, count)
}

/// Solves the branch equation at a singular point.
pub fn solve_branch_equation<T: Real>(geom: &SingularGeometry<T>) -> BranchRoots<T> {
    let p = geom.codim();
    let m_mat = geom.d_g.scaled(geom.f_sigma);
    let b = geom.constraint_force();
    let (m, q) = m_mat.symmetric_eigen();
    let beta: Vec<T> = (0..p).map(|i| dot(&q.col(i), &b)).collect();

    let scale_m = m.iter().fold(T::one(), |s, v| s.max(v.abs()));
    let scale_b = norm(&b).max(T::one());
    let group_tol = T::tol(1e-10) * scale_m;
    let beta_tol = T::tol(1e-12) * scale_b;

    // Eigenvalue groups (ascending order makes them contiguous).
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..p {
        match groups.last_mut() {
            Some(g) if (m[i] - m[g[0]]).abs() <= group_tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let w_at = |lambda: T, skip: Option<&[usize]>| -> Vec<T> {
        let mut w = vec![T::zero(); p];
        for i in 0..p {
            if skip.is_some_and(|s| s.contains(&i)) {
                continue;
            }
            let coef = -beta[i] / (m[i] + lambda);
            for (r, wr) in w.iter_mut().enumerate() {
                *wr = *wr + coef * q[(r, i)];
            }
        }
        w
    };

    let mut nonzero = Vec::new();
    let mut manifold: Vec<Vec<T>> = Vec::new();

    // Generic case: lambda away from the spectrum of -M.
    let (gm, gc): (Vec<T>, Vec<T>) = groups
        .iter()
        .filter_map(|g| {
            let c: T = g.iter().map(|&i| beta[i] * beta[i]).sum();
            (c.sqrt() > beta_tol).then_some((m[g[0]], c))
        })
        .unzip();
    for lambda in secular_roots(&gm, &gc) {
        let w = w_at(lambda, None);
        let wn = norm(&w);
        let w = scale(T::one() / wn, &w);
        push_unique(&mut nonzero, rho_from_w(geom, &w));
    }

    // Degenerate case: lambda = -m on an eigenspace the force does not see.
    for g in &groups {
        let lambda = -m[g[0]];
        let c: T = g.iter().map(|&i| beta[i] * beta[i]).sum();
        if lambda <= T::tol(1e-13) || c.sqrt() > beta_tol {
            continue;
        }
        let w0 = w_at(lambda, Some(g));
        let r2 = T::one() - dot(&w0, &w0);
        if r2.abs() <= T::tol(1e-12) {
            push_unique(&mut nonzero, rho_from_w(geom, &w0));
        } else if r2 > T::zero() {
            let r = r2.sqrt();
            let basis: Vec<Vec<T>> = g.iter().map(|&i| q.col(i)).collect();
            let pts = sphere_points(&basis, MANIFOLD_SAMPLES);
            let roots: Vec<Vec<T>> = pts
                .iter()
                .map(|u| {
                    let w: Vec<T> = w0.iter().zip(u).map(|(&a, &b)| a + r * b).collect();
                    rho_from_w(geom, &w)
                })
                .collect();
            if g.len() == 1 {
                for rho in roots {
                    push_unique(&mut nonzero, rho);
                }
            } else {
                manifold.extend(roots);
            }
        }
    }

    BranchRoots {
        nonzero_roots: nonzero,
        zero_root_directions: zero_roots(geom),
        root_manifold_samples: (!manifold.is_empty()).then_some(manifold),
    }
}

/// Unit `omega` with `F t(grad g) omega + d_rho V_S = 0`.
pub fn zero_roots<T: Real>(geom: &SingularGeometry<T>) -> Vec<Vec<T>> {
    if geom.f_sigma == T::zero() {
        return Vec::new();
    }
    let Some(dinv_b) = geom.d_g.solve(&geom.constraint_force()) else {
        return Vec::new();
    };
    let w = scale(-T::one() / geom.f_sigma, &dinv_b);
    let wn = norm(&w);
    if (wn - T::one()).abs() <= T::tol(CRITICAL_TOL) {
        vec![scale(T::one() / wn, &w)]
    } else {
        Vec::new()
    }
}

/// `D = (F t(grad g))^{-1}(-d_rho V_S)` in constraint coordinates; infeasible when `|D| > 1`.
pub fn mean_direction<T: Real>(geom: &SingularGeometry<T>) -> Result<MeanDirection<T>, ClassifyError> {
    if geom.f_sigma == T::zero() {
        return Err(ClassifyError::ZeroShapeOperator);
    }
    let dinv_b = geom.d_g.solve(&geom.constraint_force()).ok_or(PotentialError::RankDeficient(0.0))?;
    let dvec = scale(-T::one() / geom.f_sigma, &dinv_b);
    Ok(if norm(&dvec) <= T::one() + T::tol(CRITICAL_TOL) {
        MeanDirection::Feasible(dvec)
    } else {
        MeanDirection::Infeasible(dvec)
    })
}

/// Two-atom measure on `S^0 = {+1, -1}` satisfying the asymmetry condition.
pub fn solve_nu_p1<T: Real>(geom: &SingularGeometry<T>, total_mass: T) -> Result<SphereAtoms<T>, ClassifyError> {
    let (a, f, _) = scalar_data(geom)?;
    if regime(geom) == Regime::Subcritical {
        return Ok(SphereAtoms::zero());
    }
    // Snap values that are exact up to roundoff so the sign test is stable.
    let snap = |v: T| if v.abs() <= T::tol(1e-14) { T::zero() } else { v };
    Ok(match nu_scalar(snap(a), snap(f), total_mass) {
        Some((plus, minus)) => SphereAtoms {
            atoms: vec![(vec![T::one()], plus), (vec![-T::one()], minus)],
            total_mass,
        },
        None => SphereAtoms::zero(),
    })
}

/// Independent route: fixed-point iteration `w -> normalize(-b - M w)` from
/// sampled sphere directions, polished by Newton on `((M + lambda) w + b, |w|^2 - 1)`.
pub fn branch_roots_sampled<T: Real>(geom: &SingularGeometry<T>, samples: usize) -> Vec<Vec<T>> {
    let p = geom.codim();
    let m_mat = geom.d_g.scaled(geom.f_sigma);
    let b = geom.constraint_force();
    let mut found: Vec<Vec<T>> = Vec::new();
    for w0 in sphere_directions::<T>(p, samples) {
        let mut w = w0;
        for _ in 0..20 {
            let mw = m_mat.matvec(&w);
            let v: Vec<T> = (0..p).map(|i| -b[i] - mw[i]).collect();
            let vn = norm(&v);
            if vn <= T::tol(1e-14) {
                break;
            }
            w = scale(T::one() / vn, &v);
        }
        let mw = m_mat.matvec(&w);
        let mut lambda = -dot(&w, &mw) - dot(&w, &b);
        let mut converged = false;
        for _ in 0..50 {
            let mw = m_mat.matvec(&w);
            let mut res: Vec<T> = (0..p).map(|i| mw[i] + lambda * w[i] + b[i]).collect();
            res.push(dot(&w, &w) - T::one());
            if norm(&res) <= T::tol(1e-14) {
                converged = true;
                break;
            }
            let mut jac = Mat::zeros(p + 1, p + 1);
            for i in 0..p {
                for j in 0..p {
                    jac[(i, j)] = m_mat[(i, j)] + if i == j { lambda } else { T::zero() };
                }
                jac[(i, p)] = w[i];
                jac[(p, i)] = T::lit(2.0) * w[i];
            }
            let Some(step) = jac.solve(&res) else { break };
            for i in 0..p {
                w[i] = w[i] - step[i];
            }
            lambda = lambda - step[p];
        }
        if converged && lambda > T::tol(1e-10) {
            let rho = rho_from_w(geom, &w);
            if geom.branch_residual(&rho) <= T::tol(1e-10) {
                push_unique(&mut found, rho);
            }
        }
    }
    found
}

fn label_for<T>(roots: &BranchRoots<T>, nu_feasible: bool, regime: Regime) -> Label {
    if roots.is_empty() {
        Label::NoContact
    } else if !nu_feasible && regime != Regime::Subcritical {
        Label::MassForbidden
    } else if roots.has_nonzero() && !roots.zero_root_directions.is_empty() {
        Label::MixedRoots
    } else if roots.has_nonzero() {
        Label::BranchesExist
    } else {
        Label::ZeroRootsOnly
    }
}

pub fn classify_geometry<T: Real>(geom: SingularGeometry<T>) -> ClassificationReport<T> {
    let regime = regime(&geom);
    let roots = solve_branch_equation(&geom);
    let mut notes = Vec::new();
    let mean = match mean_direction(&geom) {
        Ok(m) => Some(m),
        Err(_) => {
            notes.push("shape function vanishes at the point".to_string());
            None
        }
    };
    let nu_feasible = match &mean {
        Some(m) => m.is_feasible(),
        None => geom.norm_normal_grad <= T::tol(CRITICAL_TOL),
    };
    if regime == Regime::Subcritical && roots.has_nonzero() {
        notes.push("subcritical: each nonzero root carries exactly one trajectory".to_string());
    }
    if roots.root_manifold_samples.is_some() {
        notes.push("nonzero roots form a continuum; samples reported unreduced".to_string());
    }
    let label = label_for(&roots, nu_feasible, regime);
    ClassificationReport { geometry: geom, regime, roots, nu_feasible, mean_direction: mean, label, notes }
}

pub fn classify_point<T: Real>(pot: &ConicalPotential, sigma: &[T]) -> Result<ClassificationReport<T>, ClassifyError> {
    Ok(classify_geometry(pot.geometry(sigma)?))
}

/// Classifies the projections onto the singular set of a regular grid of
/// `per_axis^d` points in `[-half_width, half_width]^d`.
pub fn classify_sweep(
    pot: &ConicalPotential,
    half_width: f64,
    per_axis: usize,
) -> Vec<Result<ClassificationReport<f64>, ClassifyError>> {
    let d = pot.dim();
    let total = per_axis.pow(d as u32);
    let mut sigmas: Vec<Vec<f64>> = Vec::new();
    for k in 0..total {
        let mut idx = k;
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let j = idx % per_axis;
                idx /= per_axis;
                if per_axis == 1 {
                    0.0
                } else {
                    -half_width + 2.0 * half_width * j as f64 / (per_axis - 1) as f64
                }
            })
            .collect();
        if let Some(s) = pot.project_to_singular_set(&x) {
            push_unique(&mut sigmas, s);
        }
    }
    sigmas.iter().map(|s| classify_point(pot, s)).collect()
}
