//! Minkowski space R^{n,1}, the hyperboloid model of H^n, the de Sitter
//! sphere and null rays.
//!
//! Coordinate 0 is the time coordinate: `<u, v> = -u0 v0 + sum_{i>=1} ui vi`.
//! A horosphere is a future null vector `xi`; the horosphere itself is the
//! level set `{x in H^n : <x, xi> = -1}` and scaling `xi` by `e^t` moves it a
//! distance `t` toward its ideal point.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Tolerance for the quadric constraints of the point types.
pub const INVARIANT_TOL: f64 = 1e-10;

/// A vector of Minkowski space R^{n,1}.
#[derive(Clone, PartialEq)]
pub struct MVec(pub DVector<f64>);

impl MVec {
    pub fn new(coords: Vec<f64>) -> Self {
        MVec(DVector::from_vec(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        MVec(DVector::from_column_slice(coords))
    }

    pub fn zeros(len: usize) -> Self {
        MVec(DVector::zeros(len))
    }

    /// Standard basis vector `e_i` of R^{len}.
    pub fn basis(len: usize, i: usize) -> Self {
        let mut v = DVector::zeros(len);
        v[i] = 1.0;
        MVec(v)
    }

    /// Number of coordinates (n + 1 for H^n).
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    /// Minkowski product. Lengths must agree; use [`mink_inner`] for a checked
    /// version.
    #[inline]
    pub fn inner(&self, other: &MVec) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        let mut acc = -self.0[0] * other.0[0];
        for i in 1..self.len() {
            acc += self.0[i] * other.0[i];
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    /// Euclidean norm of the coordinate vector.
    pub fn euclid_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Spatial part (coordinates 1..=n).
    pub fn spatial(&self) -> DVector<f64> {
        self.0.rows(1, self.len() - 1).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn scale(&self, s: f64) -> MVec {
        MVec(&self.0 * s)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &MVec) -> MVec {
        MVec(&self.0 + &other.0 * s)
    }

    /// Applies a matrix to the coordinate vector.
    pub fn transform(&self, m: &DMatrix<f64>) -> MVec {
        MVec(m * &self.0)
    }
}

impl fmt::Debug for MVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MVec{:?}", self.0.as_slice())
    }
}

impl Index<usize> for MVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for MVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &MVec {
    type Output = MVec;
    fn add(self, rhs: &MVec) -> MVec {
        MVec(&self.0 + &rhs.0)
    }
}

impl Add for MVec {
    type Output = MVec;
    fn add(self, rhs: MVec) -> MVec {
        MVec(self.0 + rhs.0)
    }
}

impl AddAssign<&MVec> for MVec {
    fn add_assign(&mut self, rhs: &MVec) {
        self.0 += &rhs.0;
    }
}

impl Sub for &MVec {
    type Output = MVec;
    fn sub(self, rhs: &MVec) -> MVec {
        MVec(&self.0 - &rhs.0)
    }
}

impl Sub for MVec {
    type Output = MVec;
    fn sub(self, rhs: MVec) -> MVec {
        MVec(self.0 - rhs.0)
    }
}

impl Mul<f64> for &MVec {
    type Output = MVec;
    fn mul(self, s: f64) -> MVec {
        MVec(&self.0 * s)
    }
}

impl Mul<f64> for MVec {
    type Output = MVec;
    fn mul(self, s: f64) -> MVec {
        MVec(self.0 * s)
    }
}

impl Neg for MVec {
    type Output = MVec;
    fn neg(self) -> MVec {
        MVec(-self.0)
    }
}

/// The Minkowski form matrix `diag(-1, 1, ..., 1)` of size `len`.
pub fn form_matrix(len: usize) -> DMatrix<f64> {
    let mut eta = DMatrix::identity(len, len);
    eta[(0, 0)] = -1.0;
    eta
}

/// Gram matrix `G_ij = <a_i, b_j>`.
pub fn gram(a: &[MVec], b: &[MVec]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i].inner(&b[j]))
}

/// Checked Minkowski product.
pub fn mink_inner(u: &MVec, v: &MVec) -> Result<f64> {
    if u.len() != v.len() {
        return Err(GeomError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.len() < 2 {
        return Err(GeomError::InvalidParameter(
            "Minkowski vectors need at least two coordinates".into(),
        ));
    }
    Ok(u.inner(v))
}

fn quadric_residual(v: &MVec, target: f64) -> f64 {
    let scale = v.0.norm_squared().max(1.0);
    (v.norm_sq() - target).abs() / scale
}

/// A point of the hyperboloid `<x, x> = -1, x0 > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct HPoint(MVec);

impl HPoint {
    pub fn new(v: MVec) -> Result<Self> {
        if v.len() < 3 {
            return Err(GeomError::InvalidPoint(format!(
                "hyperboloid points need n >= 2, got {} coordinates",
                v.len()
            )));
        }
        if !v.is_finite() {
            return Err(GeomError::NonFinite("hyperboloid point"));
        }
        let r = quadric_residual(&v, -1.0);
        if r > INVARIANT_TOL || v[0] <= 0.0 {
            return Err(GeomError::InvalidPoint(format!(
                "not on the future hyperboloid (residual {r:e}, x0 = {})",
                v[0]
            )));
        }
        Ok(HPoint(v))
    }

    /// Wraps a vector known to satisfy the invariants.
    pub(crate) fn new_unchecked(v: MVec) -> Self {
        HPoint(v)
    }

    /// Rescales a future timelike vector onto the hyperboloid.
    pub fn normalize(v: MVec) -> Result<Self> {
        let q = v.norm_sq();
        if !(q < 0.0) || v[0] <= 0.0 || !v.is_finite() {
            return Err(GeomError::InvalidPoint(
                "vector is not future timelike".into(),
            ));
        }
        Ok(HPoint(v.scale(1.0 / (-q).sqrt())))
    }

    /// The point `(1, 0, ..., 0)` of H^n.
    pub fn origin(n: usize) -> Self {
        HPoint(MVec::basis(n + 1, 0))
    }

    /// Ambient dimension minus one, i.e. the n of H^n.
    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn vec(&self) -> &MVec {
        &self.0
    }

    pub fn into_vec(self) -> MVec {
        self.0
    }
}

/// A point of the de Sitter sphere `<v, v> = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeSitterPoint(MVec);

impl DeSitterPoint {
    pub fn new(v: MVec) -> Result<Self> {
        if !v.is_finite() {
            return Err(GeomError::NonFinite("de Sitter point"));
        }
        let r = quadric_residual(&v, 1.0);
        if r > INVARIANT_TOL {
            return Err(GeomError::InvalidPoint(format!(
                "not on the de Sitter sphere (residual {r:e})"
            )));
        }
        Ok(DeSitterPoint(v))
    }

    /// Rescales a spacelike vector onto the de Sitter sphere.
    pub fn normalize(v: MVec) -> Result<Self> {
        let q = v.norm_sq();
        if !(q > 0.0) || !v.is_finite() {
            return Err(GeomError::InvalidPoint("vector is not spacelike".into()));
        }
        Ok(DeSitterPoint(v.scale(1.0 / q.sqrt())))
    }

    pub fn vec(&self) -> &MVec {
        &self.0
    }
}

/// A horosphere, stored as a future null vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Horosphere(MVec);

impl Horosphere {
    pub fn new(v: MVec) -> Result<Self> {
        if v.len() < 3 {
            return Err(GeomError::InvalidPoint(
                "horospheres need n >= 2".into(),
            ));
        }
        if !v.is_finite() {
            return Err(GeomError::NonFinite("horosphere"));
        }
        let r = quadric_residual(&v, 0.0);
        if r > INVARIANT_TOL || v[0] <= 0.0 {
            return Err(GeomError::InvalidPoint(format!(
                "not a future null vector (residual {r:e}, xi0 = {})",
                v[0]
            )));
        }
        Ok(Horosphere(v))
    }

    pub(crate) fn new_unchecked(v: MVec) -> Self {
        Horosphere(v)
    }

    pub fn vec(&self) -> &MVec {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }

    /// The horosphere of the same pencil at signed distance `t` toward the
    /// ideal point.
    pub fn shifted(&self, t: f64) -> Horosphere {
        Horosphere(self.0.scale(t.exp()))
    }

    /// Whether `x` lies on this horosphere (within `tol`).
    pub fn contains(&self, x: &HPoint, tol: f64) -> bool {
        (x.vec().inner(&self.0) + 1.0).abs() <= tol
    }

    pub fn ideal_point(&self) -> IdealPoint {
        IdealPoint(self.0.scale(1.0 / self.0[0]))
    }
}

/// A point of the ideal boundary, stored as a null vector with first
/// coordinate 1 (so its spatial part is a unit vector of R^n).
#[derive(Clone, Debug, PartialEq)]
pub struct IdealPoint(MVec);

impl IdealPoint {
    pub fn from_null(v: &MVec) -> Result<Self> {
        if v[0] <= 0.0 || quadric_residual(v, 0.0) > 1e-8 {
            return Err(GeomError::InvalidPoint("not a future null ray".into()));
        }
        Ok(IdealPoint(v.scale(1.0 / v[0])))
    }

    pub fn vec(&self) -> &MVec {
        &self.0
    }

    /// Unit direction in R^n as seen from the origin.
    pub fn direction(&self) -> DVector<f64> {
        self.0.spatial()
    }

    /// Euclidean distance between the normalized representatives.
    pub fn distance(&self, other: &IdealPoint) -> f64 {
        (&self.0 .0 - &other.0 .0).norm()
    }
}

/// Hyperbolic distance `arccosh(-<x, y>)`, evaluated as
/// `2 asinh(|x - y| / 2)` which stays accurate for nearby points.
pub fn hdist(x: &HPoint, y: &HPoint) -> f64 {
    let d = x.vec() - y.vec();
    2.0 * (0.5 * d.norm_sq().max(0.0).sqrt()).asinh()
}

/// Point at distance `t` along the geodesic through `x` with unit velocity `w`.
pub fn geodesic_point(x: &HPoint, w: &MVec, t: f64) -> Result<HPoint> {
    if w.len() != x.vec().len() {
        return Err(GeomError::DimensionMismatch {
            expected: x.vec().len(),
            found: w.len(),
        });
    }
    let residual = (w.norm_sq() - 1.0).abs().max(w.inner(x.vec()).abs());
    if residual > 1e-8 {
        return Err(GeomError::NotUnitTangent { residual });
    }
    let p = x.vec().scale(t.cosh()).axpy(t.sinh(), w);
    Ok(HPoint::new_unchecked(p))
}

/// Busemann function normalized by the horosphere `xi`: `-log(-<x, xi>)`.
///
/// Zero on the horosphere, increasing toward the ideal point.
pub fn busemann(xi: &Horosphere, x: &HPoint) -> f64 {
    -(-x.vec().inner(xi.vec())).ln()
}

/// Ball models used for import and export.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallModel {
    Poincare,
    Klein,
}

impl std::str::FromStr for BallModel {
    type Err = GeomError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poincare" => Ok(BallModel::Poincare),
            "klein" => Ok(BallModel::Klein),
            other => Err(GeomError::InvalidParameter(format!(
                "unknown ball model '{other}'"
            ))),
        }
    }
}

/// Maps a hyperboloid point into the unit ball of the chosen model.
pub fn to_ball(x: &HPoint, model: BallModel) -> DVector<f64> {
    let v = x.vec();
    let denom = match model {
        BallModel::Poincare => 1.0 + v[0],
        BallModel::Klein => v[0],
    };
    v.spatial() / denom
}

/// Inverse of [`to_ball`].
pub fn from_ball(y: &DVector<f64>, model: BallModel) -> Result<HPoint> {
    let r2 = y.norm_squared();
    if !(r2 < 1.0) {
        return Err(GeomError::InvalidPoint(format!(
            "ball point has norm {} >= 1",
            r2.sqrt()
        )));
    }
    let n = y.len();
    let mut v = DVector::zeros(n + 1);
    match model {
        BallModel::Poincare => {
            let d = 1.0 - r2;
            v[0] = (1.0 + r2) / d;
            for i in 0..n {
                v[i + 1] = 2.0 * y[i] / d;
            }
        }
        BallModel::Klein => {
            let rho = 1.0 / (1.0 - r2).sqrt();
            v[0] = rho;
            for i in 0..n {
                v[i + 1] = rho * y[i];
            }
        }
    }
    Ok(HPoint::new_unchecked(MVec(v)))
}

/// An orthonormal basis of the spacelike hyperplane `x^⊥` at `x`, obtained
/// by transporting the standard basis `e_1..e_n` from the origin along the
/// geodesic to `x`.
pub fn tangent_frame(x: &HPoint) -> Vec<MVec> {
    let n = x.dim();
    let v = x.vec();
    let o = MVec::basis(n + 1, 0);
    let c = v[0];
    (1..=n)
        .map(|k| {
            let e = MVec::basis(n + 1, k);
            // T(e) = e + <x, e>/(1 + x0) (o + x)
            let coef = v.inner(&e) / (1.0 + c);
            e.axpy(coef, &(&o + v))
        })
        .collect()
}

/// Gram–Schmidt with respect to the Minkowski form, for spacelike vectors
/// orthogonal to a timelike `x` (so the form is positive there).
pub fn orthonormalize_spacelike(vs: &[MVec]) -> Result<Vec<MVec>> {
    let mut out: Vec<MVec> = Vec::with_capacity(vs.len());
    for v in vs {
        let mut w = v.clone();
        for u in &out {
            let c = w.inner(u);
            w = w.axpy(-c, u);
        }
        let q = w.norm_sq();
        if !(q > 1e-24) {
            return Err(GeomError::RankDeficient);
        }
        out.push(w.scale(1.0 / q.sqrt()));
    }
    Ok(out)
}
