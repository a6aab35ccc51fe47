//! Conical potentials `V = V_S + |g| F` and their singular-set geometry.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{ExprError, Jet, ScalarField};
use crate::linalg::Mat;
use crate::scalar::{norm, Real};

/// Absolute threshold on `|g(x)|` below which `x` is treated as a point of the singular set.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Smallest admissible singular value of the constraint Jacobian on the singular set.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("constraint count p = {p} must satisfy 1 <= p <= d = {d}")]
    BadCodimension { p: usize, d: usize },
    #[error("gradient requested at a point of the singular set (|g| = {0:e})")]
    SingularEvaluation(f64),
    #[error("point is not on the singular set (|g| = {0:e})")]
    NotOnSingularSet(f64),
    #[error("constraint Jacobian is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("point has dimension {got}, potential has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed potential document: {0}")]
    Document(String),
}

/// JSON form of a potential: `{"V_S": "...", "F": "...", "g": ["..."], "d": 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialDoc {
    #[serde(rename = "V_S")]
    pub v_s: String,
    #[serde(rename = "F")]
    pub f: String,
    pub g: Vec<String>,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicalPotential {
    v_s: ScalarField,
    f: ScalarField,
    g: Vec<ScalarField>,
    d: usize,
    doc: PotentialDoc,
}

impl ConicalPotential {
    pub fn from_doc(doc: PotentialDoc) -> Result<Self, PotentialError> {
        let d = doc.d;
        let p = doc.g.len();
        if d == 0 || p == 0 || p > d {
            return Err(PotentialError::BadCodimension { p, d });
        }
        let v_s = ScalarField::parse(&doc.v_s, d)?;
        let f = ScalarField::parse(&doc.f, d)?;
        let g = doc.g.iter().map(|s| ScalarField::parse(s, d)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { v_s, f, g, d, doc })
    }

    /// Builds a potential from expression strings.
    pub fn parse(v_s: &str, f: &str, g: &[&str], d: usize) -> Result<Self, PotentialError> {
        Self::from_doc(PotentialDoc {
            v_s: v_s.to_string(),
            f: f.to_string(),
            g: g.iter().map(|s| s.to_string()).collect(),
            d,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PotentialError> {
        let doc: PotentialDoc = serde_json::from_str(text).map_err(|e| PotentialError::Document(e.to_string()))?;
        Self::from_doc(doc)
    }

    /// `V(x) = s|x|` in one dimension.
    pub fn cone_1d(s: f64) -> Self {
        Self::parse("0", &format!("{s:?}"), &["x1"], 1).expect("static expression")
    }

    pub fn doc(&self) -> &PotentialDoc {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.doc).expect("potential document serializes")
    }

    /// Hex SHA-256 of the canonical JSON document.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn codim(&self) -> usize {
        self.g.len()
    }

    pub fn smooth_part(&self) -> &ScalarField {
        &self.v_s
    }

    pub fn shape(&self) -> &ScalarField {
        &self.f
    }

    pub fn constraints(&self) -> &[ScalarField] {
        &self.g
    }

    /// True when the conical term vanishes identically.
    pub fn is_smooth(&self) -> bool {
        self.f.is_identically_zero()
    }

    /// True when every constraint component is affine in `x`.
    pub fn has_affine_constraints(&self) -> bool {
        self.g.iter().all(|c| c.expr().is_affine())
    }

    fn check_dim<T>(&self, x: &[T]) -> Result<(), PotentialError> {
        if x.len() != self.d {
            return Err(PotentialError::DimensionMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    pub fn g_value<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.g.iter().map(|c| c.value(x)).collect()
    }

    pub fn g_norm<T: Real>(&self, x: &[T]) -> T {
        norm(&self.g_value(x))
    }

    /// Constraint Jacobian, `p x d`.
    pub fn g_jacobian<T: Real>(&self, x: &[T]) -> Mat<T> {
        Mat::from_rows(&self.g.iter().map(|c| c.gradient(x)).collect::<Vec<_>>())
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        self.v_s.value(x) + self.g_norm(x) * self.f.value(x)
    }

    fn jet<T: Real>(&self, x: &[T]) -> Result<Jet<T>, PotentialError> {
        self.check_dim(x)?;
        let gn = self.g_norm(x);
        if gn <= T::lit(SINGULAR_TOL) {
            return Err(PotentialError::SingularEvaluation(gn.as_f64()));
        }
        let mut sq = Jet::constant(T::zero(), self.d);
        for c in &self.g {
            let j = c.jet(x);
            sq = sq.add(&j.mul(&j));
        }
        Ok(self.v_s.jet(x).add(&sq.sqrt().mul(&self.f.jet(x))))
    }

    /// `grad V` away from the singular set.
    pub fn grad<T: Real>(&self, x: &[T]) -> Result<Vec<T>, PotentialError> {
        Ok(self.jet(x)?.grad)
    }

    pub fn hessian<T: Real>(&self, x: &[T]) -> Result<Mat<T>, PotentialError> {
        let j = self.jet(x)?;
        let d = self.d;
        Ok(Mat::from_rows(&(0..d).map(|i| j.hess[i * d..(i + 1) * d].to_vec()).collect::<Vec<_>>()))
    }

    /// Gradient of the one-sided smooth extension `V_S + side * g F` (p = 1 only).
    ///
    /// On the side where `sign(g) = side` this is the gradient of `V`; it stays
    /// defined on and across the singular set, which lets the flow step over it.
    pub fn side_grad<T: Real>(&self, x: &[T], side: T) -> Vec<T> {
        debug_assert_eq!(self.codim(), 1);
        let g = self.g[0].value(x);
        let dg = self.g[0].gradient(x);
        let fv = self.f.value(x);
        let df = self.f.gradient(x);
        let dvs = self.v_s.gradient(x);
        (0..self.d).map(|i| dvs[i] + side * (g * df[i] + fv * dg[i])).collect()
    }

    /// Gradient of `V_S` only; used by the insider flow.
    pub fn grad_smooth<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.v_s.gradient(x)
    }

    /// Gauss-Newton projection of `x` onto the singular set. Returns `None` when
    /// the iteration fails to reach `SINGULAR_TOL`.
    pub fn project_to_singular_set<T: Real>(&self, x: &[T]) -> Option<Vec<T>> {
        let mut y = x.to_vec();
        for _ in 0..50 {
            let g = self.g_value(&y);
            if norm(&g) <= T::lit(SINGULAR_TOL) * T::lit(0.1) {
                return Some(y);
            }
            let j = self.g_jacobian(&y);
            let step = j.matmul(&j.transpose()).solve(&g)?;
            let dx = j.transpose().matvec(&step);
            for (yi, di) in y.iter_mut().zip(dx) {
                *yi = *yi - di;
            }
        }
        (self.g_norm(&y) <= T::lit(SINGULAR_TOL)).then_some(y)
    }

    pub fn geometry<T: Real>(&self, sigma: &[T]) -> Result<SingularGeometry<T>, PotentialError> {
        self.check_dim(sigma)?;
        let gn = self.g_norm(sigma);
        if gn > T::lit(SINGULAR_TOL) {
            return Err(PotentialError::NotOnSingularSet(gn.as_f64()));
        }
        SingularGeometry::build(
            sigma.to_vec(),
            self.g_jacobian(sigma),
            self.v_s.gradient(sigma),
            self.f.value(sigma),
        )
    }
}

/// Pointwise linear algebra at a point `sigma` of the singular set.
///
/// Normal vectors are carried as ambient `d`-vectors orthogonal to `ker grad g`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularGeometry<T> {
    pub sigma: Vec<T>,
    pub grad_g: Mat<T>,
    pub tangent_projector: Mat<T>,
    pub grad_vs: Vec<T>,
    pub normal_grad_vs: Vec<T>,
    pub d_g: Mat<T>,
    pub f_sigma: T,
    pub op_norm: T,
    pub norm_normal_grad: T,
}

impl<T: Real> SingularGeometry<T> {
    /// Assembles the geometry from raw pointwise data. Exposed so the classifier
    /// can be exercised on synthetic data without an expression-backed potential.
    pub fn build(sigma: Vec<T>, grad_g: Mat<T>, grad_vs: Vec<T>, f_sigma: T) -> Result<Self, PotentialError> {
        let d = sigma.len();
        let jt = grad_g.transpose();
        let d_g = grad_g.matmul(&jt);
        let (eig, _) = d_g.symmetric_eigen();
        let smin = eig[0].max(T::zero()).sqrt();
        if smin <= T::lit(RANK_TOL) {
            return Err(PotentialError::RankDeficient(smin.as_f64()));
        }
        let smax = eig[eig.len() - 1].sqrt();
        let d_g_inv = d_g.inverse().ok_or(PotentialError::RankDeficient(smin.as_f64()))?;
        let normal_proj = jt.matmul(&d_g_inv).matmul(&grad_g);
        let tangent_projector = Mat::identity(d).sub(&normal_proj);
        let normal_grad_vs = normal_proj.matvec(&grad_vs);
        let norm_normal_grad = norm(&normal_grad_vs);
        Ok(Self {
            sigma,
            grad_g,
            tangent_projector,
            grad_vs,
            normal_grad_vs,
            d_g,
            f_sigma,
            op_norm: f_sigma.abs() * smax,
            norm_normal_grad,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn codim(&self) -> usize {
        self.grad_g.rows()
    }

    /// `grad g * v` for an ambient vector `v`.
    pub fn apply_grad_g(&self, v: &[T]) -> Vec<T> {
        self.grad_g.matvec(v)
    }

    /// `t(grad g) * w` for a constraint-space vector `w`.
    pub fn apply_grad_g_t(&self, w: &[T]) -> Vec<T> {
        self.grad_g.transpose().matvec(w)
    }

    /// Residual of `rho + d_rho V_S + F t(grad g) grad g rho / |grad g rho|`.
    pub fn branch_residual(&self, rho: &[T]) -> T {
        let w = self.apply_grad_g(rho);
        let wn = norm(&w);
        if wn == T::zero() {
            return T::infinity();
        }
        let back = self.apply_grad_g_t(&w);
        let r: Vec<T> = (0..self.dim())
            .map(|i| rho[i] + self.normal_grad_vs[i] + self.f_sigma * back[i] / wn)
            .collect();
        norm(&r)
    }

    /// Residual of `F t(grad g) omega + d_rho V_S` for a unit `omega` in constraint space.
    pub fn zero_root_residual(&self, omega: &[T]) -> T {
        let back = self.apply_grad_g_t(omega);
        let r: Vec<T> = (0..self.dim()).map(|i| self.f_sigma * back[i] + self.normal_grad_vs[i]).collect();
        norm(&r)
    }

    /// `grad g grad V_S`, the constraint-space image of the smooth force.
    pub fn constraint_force(&self) -> Vec<T> {
        self.apply_grad_g(&self.grad_vs)
    }
}
