//! The space C^n_+ of horospheres, realized as the future null cone of
//! R^{n,1} with the degenerate metric `g0 = <.,.>` restricted to it.
//!
//! A base point `x0` gives the chart `ξ = e^t (x0 + s)` with `s` a unit
//! vector of `x0^⊥`, in which `g0 = e^{2t} can`. A space-like hypersurface
//! transverse to the vertical lines is a graph `t = u(s)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::factor::ConformalFactor;
use crate::isometry::Isometry;
use crate::lorentz::{tangent_frame, HPoint, Horosphere, MVec};
use crate::numeric::{
    fd_christoffel, fd_riemann, richardson_first, sym_gen_eigen, symmetrize, CurvatureTensor,
    FdConfig,
};
use crate::sphere::{Jet2, SphereChart};

/// `<v, w>` for `v, w` tangent to the null cone at `xi`.
pub fn g0_inner(xi: &Horosphere, v: &MVec, w: &MVec) -> Result<f64> {
    let x = xi.vec();
    for u in [v, w] {
        if u.len() != x.len() {
            return Err(GeomError::DimensionMismatch {
                expected: x.len(),
                found: u.len(),
            });
        }
        let residual = u.inner(x).abs() / (u.euclid_norm() * x.euclid_norm()).max(1e-300);
        if residual > 1e-8 {
            return Err(GeomError::NotTangent { residual });
        }
    }
    Ok(v.inner(w))
}

/// `t` with `xi2 = e^t xi1`: the signed distance between two horospheres
/// with the same ideal point.
pub fn vertical_parameter(xi1: &Horosphere, xi2: &Horosphere) -> Result<f64> {
    let (a, b) = (xi1.vec(), xi2.vec());
    let t = (b[0] / a[0]).ln();
    let residual = (b - &a.scale(t.exp())).euclid_norm() / b.euclid_norm();
    if residual > 1e-10 {
        return Err(GeomError::NotOnOneRay { residual });
    }
    Ok(t)
}

/// The product chart `ξ ↔ (s, t)` of C^n_+ attached to a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPhi {
    base: HPoint,
    frame: Vec<MVec>,
}

/// Maps a unit vector of R^n into `x0^⊥` through an orthonormal frame.
fn lift(base: &HPoint, frame: &[MVec], s: &DVector<f64>) -> MVec {
    let mut v = base.vec().clone();
    for (f, &c) in frame.iter().zip(s.iter()) {
        v = v.axpy(c, f);
    }
    v
}

fn tangent_lift(frame: &[MVec], d: &DVector<f64>) -> MVec {
    let mut v = MVec::zeros(frame[0].len());
    for (f, &c) in frame.iter().zip(d.iter()) {
        v = v.axpy(c, f);
    }
    v
}

impl ChartPhi {
    pub fn new(base: HPoint) -> Self {
        let frame = tangent_frame(&base);
        ChartPhi { base, frame }
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn frame(&self) -> &[MVec] {
        &self.frame
    }

    /// `(s, t)` with `ξ = e^t (x0 + s)`.
    pub fn to_chart(&self, xi: &Horosphere) -> (DVector<f64>, f64) {
        let e_t = -xi.vec().inner(self.base.vec());
        let s = DVector::from_fn(self.frame.len(), |k, _| xi.vec().inner(&self.frame[k]) / e_t);
        (s, e_t.ln())
    }

    pub fn from_chart(&self, s: &DVector<f64>, t: f64) -> Horosphere {
        Horosphere::new_unchecked(lift(&self.base, &self.frame, s).scale(t.exp()))
    }

    /// Pullback of `g0` in the coordinates `(y, t)` of a sphere chart times
    /// the vertical line; the last row and column belong to `t`.
    pub fn pullback_metric(&self, chart: &SphereChart, y: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let m = chart.dim();
        let sj = chart.eval(y);
        let xi = lift(&self.base, &self.frame, &sj.point).scale(t.exp());
        let mut d: Vec<MVec> = sj
            .d
            .iter()
            .map(|v| tangent_lift(&self.frame, v).scale(t.exp()))
            .collect();
        d.push(xi);
        DMatrix::from_fn(m + 1, m + 1, |a, b| d[a].inner(&d[b]))
    }
}

/// The totally geodesic hyperplane of C^n_+ made of the horospheres
/// through `pole`.
#[derive(Clone, Debug, PartialEq)]
pub struct TGHyperplane {
    pub pole: HPoint,
}

impl TGHyperplane {
    pub fn contains(&self, xi: &Horosphere, tol: f64) -> bool {
        (self.pole.vec().inner(xi.vec()) + 1.0).abs() <= tol
    }

    /// The horosphere of this hyperplane on the vertical line of `xi`.
    pub fn project(&self, xi: &Horosphere) -> Horosphere {
        let mu = -self.pole.vec().inner(xi.vec());
        Horosphere::new_unchecked(xi.vec().scale(1.0 / mu))
    }

    /// 2-jet of the height `t_p(s) = -log(-<p, x0 + s>)` as a graph over
    /// the base of `graph`.
    pub fn height_jet(&self, graph: &GraphSurface, chart: &SphereChart, y: &DVector<f64>) -> Jet2 {
        let p = self.pole.vec();
        let a = -p.inner(graph.base.vec());
        let b = DVector::from_fn(graph.frame.len(), |k, _| p.inner(&graph.frame[k]));
        let sj = chart.eval(y);
        let l = a - b.dot(&sj.point);
        let amb = Jet2 {
            value: -l.ln(),
            grad: &b / l,
            hess: &b * b.transpose() / (l * l),
        };
        amb.pullback(&sj)
    }
}

/// The graph `s ↦ e^{u(s)} (x0 + s)` over the totally geodesic hyperplane
/// of the base point.
#[derive(Clone, Debug)]
pub struct GraphSurface {
    base: HPoint,
    frame: Vec<MVec>,
    factor: ConformalFactor,
}

impl GraphSurface {
    pub fn new(base: HPoint, factor: ConformalFactor) -> Result<Self> {
        if factor.n() != base.dim() {
            return Err(GeomError::DimensionMismatch {
                expected: base.dim(),
                found: factor.n(),
            });
        }
        let frame = tangent_frame(&base);
        Ok(GraphSurface {
            base,
            frame,
            factor,
        })
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    pub fn frame(&self) -> &[MVec] {
        &self.frame
    }

    pub fn factor(&self) -> &ConformalFactor {
        &self.factor
    }

    pub fn n(&self) -> usize {
        self.base.dim()
    }

    pub fn chart_phi(&self) -> ChartPhi {
        ChartPhi {
            base: self.base.clone(),
            frame: self.frame.clone(),
        }
    }

    /// `x0 + s` for a unit vector `s` of R^n.
    pub fn lift(&self, s: &DVector<f64>) -> MVec {
        lift(&self.base, &self.frame, s)
    }

    pub fn point(&self, s: &DVector<f64>) -> Horosphere {
        Horosphere::new_unchecked(self.lift(s).scale(self.factor.value(s).exp()))
    }

    /// The point `ξ(y)`, its chart derivatives and the 2-jet of `u`.
    pub fn point_jet(
        &self,
        chart: &SphereChart,
        y: &DVector<f64>,
    ) -> Result<(Horosphere, Vec<MVec>, Jet2)> {
        let sj = chart.eval(y);
        let u = self.factor.chart_jet(chart, y)?;
        let eu = u.value.exp();
        let l = self.lift(&sj.point);
        let d = sj
            .d
            .iter()
            .enumerate()
            .map(|(i, ds)| tangent_lift(&self.frame, ds).axpy(u.grad[i], &l).scale(eu))
            .collect();
        Ok((Horosphere::new_unchecked(l.scale(eu)), d, u))
    }
}

/// Pole of the totally geodesic hyperplane tangent to the graph at `y`:
/// the solution of `<p, ξ> = -1`, `<p, ∂_i ξ> = 0` on the hyperboloid.
pub fn tangent_hyperplane(g: &GraphSurface, chart: &SphereChart, y: &DVector<f64>) -> Result<TGHyperplane> {
    let (xi, dxi, _) = g.point_jet(chart, y)?;
    Ok(TGHyperplane {
        pole: pole_from_tangent(&xi, &dxi)?,
    })
}

/// The point `p` of H^n with `<p, ξ> = -1` and `<p, dξ> = 0`.
pub fn pole_from_tangent(xi: &Horosphere, dxi: &[MVec]) -> Result<HPoint> {
    let len = xi.vec().len();
    let rows: Vec<&MVec> = std::iter::once(xi.vec()).chain(dxi.iter()).collect();
    let mut a = DMatrix::zeros(rows.len(), len);
    for (r, v) in rows.iter().enumerate() {
        for c in 0..len {
            a[(r, c)] = if c == 0 { -v[c] } else { v[c] };
        }
    }
    let mut rhs = DVector::zeros(rows.len());
    rhs[0] = -1.0;
    // minimum-norm solution; the solution line is p_part + λ ξ
    let aat = &a * a.transpose();
    let chol = aat.cholesky().ok_or(GeomError::DegenerateTangency)?;
    let p_part = MVec(a.transpose() * chol.solve(&rhs));
    if !p_part.is_finite() {
        return Err(GeomError::DegenerateTangency);
    }
    // the line is null, so it meets the hyperboloid exactly once
    let lambda = 0.5 * (p_part.norm_sq() + 1.0);
    let p = p_part.axpy(lambda, xi.vec());
    HPoint::new(p).map_err(|_| GeomError::DegenerateTangency)
}

/// Intrinsic data of a graph at one point.
#[derive(Clone, Debug)]
pub struct StarForms {
    pub istar: DMatrix<f64>,
    pub iistar: DMatrix<f64>,
    pub bstar: DMatrix<f64>,
    /// Eigenvalues of `bstar`, ascending.
    pub kstar: Vec<f64>,
    /// `istar`-orthonormal eigenvectors of `bstar` (columns).
    pub eigenframe: DMatrix<f64>,
    pub tangent: TGHyperplane,
    pub u: Jet2,
}

/// `I* = e^{2u} can`, `II* = Hess(u - t_p)` (a tensor since `u - t_p` has a
/// critical point there) and `B* = I*^{-1} II*`.
pub fn star_forms(g: &GraphSurface, chart: &SphereChart, y: &DVector<f64>) -> Result<StarForms> {
    let tangent = tangent_hyperplane(g, chart, y)?;
    let u = g.factor.chart_jet(chart, y)?;
    let t = tangent.height_jet(g, chart, y);
    let iistar = symmetrize(&(&u.hess - &t.hess));
    let istar = chart.round_metric(y) * (2.0 * u.value).exp();
    if iistar.iter().chain(istar.iter()).any(|v| !v.is_finite()) {
        return Err(GeomError::NonFinite("star forms"));
    }
    let bstar = istar
        .clone()
        .cholesky()
        .ok_or(GeomError::RankDeficient)?
        .solve(&iistar);
    let (k, frame) = sym_gen_eigen(&iistar, &istar)?;
    Ok(StarForms {
        istar,
        iistar,
        bstar,
        kstar: k.iter().copied().collect(),
        eigenframe: frame,
        tangent,
        u,
    })
}

pub const STAR_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarClass {
    /// All eigenvalues of B* in (0, 1).
    TamelyConvex,
    /// All eigenvalues of B* positive.
    Convex,
    /// Space-like with a saddle-type B* (eigenvalues of both signs).
    Spacelike,
    Neither,
}

pub fn classify_star(sf: &StarForms) -> StarClass {
    let eps = STAR_EPS;
    let k = &sf.kstar;
    if k.iter().all(|&v| v > eps && v < 1.0 - eps) {
        StarClass::TamelyConvex
    } else if k.iter().all(|&v| v > eps) {
        StarClass::Convex
    } else if k.iter().any(|&v| v > eps) && k.iter().any(|&v| v < -eps) {
        StarClass::Spacelike
    } else {
        StarClass::Neither
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionalPair {
    pub i: usize,
    pub j: usize,
    /// `1 - k*_i - k*_j`
    pub formula: f64,
    /// Sectional curvature of the finite-difference Riemann tensor of I*.
    pub numeric: f64,
}

/// Curvature of the induced metric of a graph at one point.
#[derive(Clone, Debug)]
pub struct CurvatureStar {
    /// `½ I*⊙I* - I*⊙II*`, the tensor given by the Gauss formula.
    pub gauss: CurvatureTensor,
    /// Finite-difference Riemann tensor of the chart components of I*.
    pub numeric: CurvatureTensor,
    pub sectionals: Vec<SectionalPair>,
    /// `1 - tr B*`, for n = 3.
    pub kstar: Option<f64>,
    /// Largest `|(D*_X B*)Y - (D*_Y B*)X|` over pairs of the eigenframe.
    pub codazzi_defect: f64,
}

impl CurvatureStar {
    pub fn max_sectional_gap(&self) -> f64 {
        self.sectionals
            .iter()
            .fold(0.0f64, |a, p| a.max((p.formula - p.numeric).abs()))
    }
}

pub fn curvature_star(
    g: &GraphSurface,
    chart: &SphereChart,
    y: &DVector<f64>,
    fd: &FdConfig,
) -> Result<CurvatureStar> {
    let sf = star_forms(g, chart, y)?;
    let m = chart.dim();
    let h = &sf.istar;
    let gauss = CurvatureTensor::kulkarni_nomizu(h, h, h.clone())
        .scaled(0.5)
        .sum(&CurvatureTensor::kulkarni_nomizu(h, &sf.iistar, h.clone()).scaled(-1.0));
    let metric = |z: &DVector<f64>| -> Result<DMatrix<f64>> {
        let u = g.factor.chart_jet(chart, z)?;
        Ok(chart.round_metric(z) * (2.0 * u.value).exp())
    };
    let numeric = fd_riemann(&metric, y, fd.second_step)?;
    let col = |i: usize| sf.eigenframe.column(i).into_owned();
    let mut sectionals = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            sectionals.push(SectionalPair {
                i,
                j,
                formula: 1.0 - sf.kstar[i] - sf.kstar[j],
                numeric: numeric.sectional(&col(i), &col(j)),
            });
        }
    }
    let kstar = (m == 2).then(|| 1.0 - sf.bstar.trace());

    // Codazzi: T^a_ij = ∂_i B^a_j - ∂_j B^a_i + Γ^a_ic B^c_j - Γ^a_jc B^c_i
    let bfield = |z: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(star_forms(g, chart, z)?.bstar.as_slice()))
    };
    let mut db = Vec::with_capacity(m);
    for i in 0..m {
        let d = richardson_first(&bfield, y, i, fd.step)?;
        db.push(DMatrix::from_column_slice(m, m, d.as_slice()));
    }
    let gamma = fd_christoffel(&metric, y, fd.step)?;
    let b = &sf.bstar;
    let t = |i: usize, j: usize| -> DVector<f64> {
        DVector::from_fn(m, |a, _| {
            let mut v = db[i][(a, j)] - db[j][(a, i)];
            for c in 0..m {
                v += gamma[a][(i, c)] * b[(c, j)] - gamma[a][(j, c)] * b[(c, i)];
            }
            v
        })
    };
    let mut codazzi_defect = 0.0f64;
    for p in 0..m {
        for q in p + 1..m {
            let (ep, eq) = (col(p), col(q));
            let mut v = DVector::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    v += t(i, j) * (ep[i] * eq[j]);
                }
            }
            codazzi_defect = codazzi_defect.max(v.dot(&(h * &v)).max(0.0).sqrt());
        }
    }
    Ok(CurvatureStar {
        gauss,
        numeric,
        sectionals,
        kstar,
        codazzi_defect,
    })
}

/// The horosphere `xi` seen in the cone model: `q0 + ι(xi)` in R^{n+1,1},
/// where `ι` is the inclusion as `q0^⊥` and `q0` the last basis vector.
pub fn cone_embed(xi: &Horosphere) -> MVec {
    let v = xi.vec();
    let mut out = MVec::zeros(v.len() + 1);
    out.0.rows_mut(0, v.len()).copy_from(&v.0);
    out[v.len()] = 1.0;
    out
}

/// The inclusion `ι` of tangent vectors into R^{n+1,1}.
pub fn cone_embed_tangent(v: &MVec) -> MVec {
    let mut out = MVec::zeros(v.len() + 1);
    out.0.rows_mut(0, v.len()).copy_from(&v.0);
    out
}

pub fn horo_isometry(g: &Isometry, xi: &Horosphere) -> Horosphere {
    g.apply_horosphere(xi)
}

/// Conformal factor of `ξ ↦ π_H(g ξ)` on a totally geodesic hyperplane `H`
/// of C^n_+, where `π_H` is the vertical projection back to `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConformalReport {
    pub directions: Vec<DVector<f64>>,
    pub factors: Vec<f64>,
    /// Largest relative spread of the pullback ratio over directions.
    pub max_anisotropy: f64,
}

pub fn boundary_conformal_report(
    g: &Isometry,
    h: &TGHyperplane,
    directions: &[DVector<f64>],
) -> Result<BoundaryConformalReport> {
    let phi = ChartPhi::new(h.pole.clone());
    let p = h.pole.vec();
    let mut factors = Vec::with_capacity(directions.len());
    let mut max_anisotropy = 0.0f64;
    for s in directions {
        let chart = SphereChart::centered(s)?;
        let sj = chart.eval(&DVector::zeros(chart.dim()));
        let eta = g.apply(&lift(&phi.base, &phi.frame, &sj.point));
        let mu = -p.inner(&eta);
        let deta: Vec<MVec> = sj.d.iter().map(|d| g.apply(&tangent_lift(&phi.frame, d))).collect();
        let df: Vec<MVec> = deta
            .iter()
            .map(|d| d.scale(1.0 / mu).axpy(p.inner(d) / (mu * mu), &eta))
            .collect();
        let gram = DMatrix::from_fn(df.len(), df.len(), |a, b| df[a].inner(&df[b]));
        let eig = symmetrize(&gram).symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        max_anisotropy = max_anisotropy.max((hi - lo) / hi);
        factors.push(hi.sqrt());
    }
    Ok(BoundaryConformalReport {
        directions: directions.to_vec(),
        factors,
        max_anisotropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::FactorSpec;
    use crate::isometry::{make_isometry, IsometrySpec};
    use crate::sphere::low_discrepancy;

    fn graph(n: usize, spec: FactorSpec) -> GraphSurface {
        GraphSurface::new(HPoint::origin(n), ConformalFactor::new(n, spec).unwrap()).unwrap()
    }

    fn at(s: &[f64]) -> (SphereChart, DVector<f64>) {
        let c = SphereChart::centered(&DVector::from_column_slice(s)).unwrap();
        let y = DVector::zeros(c.dim());
        (c, y)
    }

    #[test]
    fn g0_and_vertical_parameter() {
        let xi = Horosphere::new(MVec::new(vec![1.0, 1.0, 0.0])).unwrap();
        assert_eq!(g0_inner(&xi, xi.vec(), xi.vec()).unwrap(), 0.0);
        let e2 = MVec::basis(3, 2);
        assert_eq!(g0_inner(&xi, &e2, &e2).unwrap(), 1.0);
        assert_eq!(g0_inner(&xi, &(xi.vec() + &e2), &e2).unwrap(), 1.0);
        assert!(g0_inner(&xi, &MVec::basis(3, 1), &e2).is_err());
        assert!((vertical_parameter(&xi, &xi.shifted(1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(vertical_parameter(&xi, &xi).unwrap(), 0.0);
        let other = Horosphere::new(MVec::new(vec![1.0, 0.0, 1.0])).unwrap();
        assert!(vertical_parameter(&xi, &other).is_err());
    }

    #[test]
    fn chart_round_trip_and_pullback() {
        let base = HPoint::new(MVec::new(vec![1.5f64.cosh(), 0.0, 1.5f64.sinh() * 0.6, 1.5f64.sinh() * 0.8])).unwrap();
        let phi = ChartPhi::new(base);
        for (k, s) in low_discrepancy(3, 50).iter().enumerate() {
            let t = -1.0 + 0.04 * k as f64;
            let xi = phi.from_chart(s, t);
            assert!(xi.vec().norm_sq().abs() < 1e-12 * xi.vec().euclid_norm().powi(2));
            let (s2, t2) = phi.to_chart(&xi);
            assert!((s2 - s).norm() < 1e-12 && (t2 - t).abs() < 1e-12);
            let chart = SphereChart::centered(s).unwrap();
            let y = DVector::from_vec(vec![0.1, -0.2]);
            let g = phi.pullback_metric(&chart, &y, t);
            let want = chart.round_metric(&y) * (2.0 * t).exp();
            assert!((g.view((0, 0), (2, 2)) - want).abs().max() < 1e-12 * (2.0 * t).exp());
            assert!(g.row(2).norm() < 1e-12 * (2.0 * t).exp());
        }
    }

    #[test]
    fn constant_graph_pole_and_star_forms() {
        let c = 1.0f64;
        let g = graph(3, FactorSpec::constant(c));
        let v = [0.0, 0.6, 0.8];
        let (chart, y) = at(&v);
        let tp = tangent_hyperplane(&g, &chart, &y).unwrap();
        let want = MVec::new(vec![c.cosh(), 0.0, c.sinh() * 0.6, c.sinh() * 0.8]);
        assert!((tp.pole.vec() - &want).euclid_norm() < 1e-12);
        let sf = star_forms(&g, &chart, &y).unwrap();
        for k in &sf.kstar {
            assert!((k - 0.4323324).abs() < 1e-7);
            assert!((k - (1.0 - (-2.0 * c).exp()) / 2.0).abs() < 1e-12);
        }
        assert_eq!(classify_star(&sf), StarClass::TamelyConvex);
        let sf = star_forms(&graph(3, FactorSpec::constant(-1.0)), &chart, &y).unwrap();
        for k in &sf.kstar {
            assert!((k - (1.0 - 1f64.exp().powi(2)) / 2.0).abs() < 1e-12);
        }
        assert_eq!(classify_star(&sf), StarClass::Neither);
        let sf = star_forms(&graph(3, FactorSpec::constant(0.0)), &chart, &y).unwrap();
        assert!(sf.iistar.abs().max() < 1e-14);
        assert!((tangent_hyperplane(&graph(3, FactorSpec::constant(0.0)), &chart, &y).unwrap().pole.vec() - HPoint::origin(3).vec()).euclid_norm() < 1e-14);
        assert_eq!(classify_star(&sf), StarClass::Neither);
    }

    #[test]
    fn pole_matches_closed_form_and_tangency_is_second_order() {
        let spec = FactorSpec::constant(0.7).plus(FactorSpec::Quadratic {
            q: vec![vec![0.1, 0.05, 0.0], vec![0.05, -0.08, 0.02], vec![0.0, 0.02, 0.03]],
        });
        let g = graph(3, spec);
        let s = DVector::from_vec(vec![0.48, 0.6, 0.64]);
        let (chart, y) = at(s.as_slice());
        let tp = tangent_hyperplane(&g, &chart, &y).unwrap();
        // p = α x0 + β s + e^{-u} ∇u with α + β = e^u + e^{-u}|∇u|², β - α = -e^{-u}
        let u = g.factor().chart_jet(&chart, &y).unwrap();
        let grad = DVector::from_fn(3, |k, _| (0..2).map(|i| u.grad[i] * chart.frame()[i][k]).sum::<f64>());
        let (eu, g2) = (u.value.exp(), u.grad.norm_squared());
        let sum = eu + g2 / eu;
        let (alpha, beta) = ((sum + 1.0 / eu) / 2.0, (sum - 1.0 / eu) / 2.0);
        let mut want = MVec::zeros(4);
        want[0] = alpha;
        for k in 0..3 {
            want[k + 1] = beta * s[k] + grad[k] / eu;
        }
        assert!((tp.pole.vec() - &want).euclid_norm() < 1e-12);
        assert!((tp.pole.vec().norm_sq() + 1.0).abs() < 1e-12);
        // u - t_p vanishes to second order with leading term ½ II*
        let sf = star_forms(&g, &chart, &y).unwrap();
        let dir = DVector::from_vec(vec![0.6, -0.8]);
        for &r in &[1e-2, 5e-3] {
            let z = &dir * r;
            let gap = g.factor().chart_jet(&chart, &z).unwrap().value - tp.height_jet(&g, &chart, &z).value;
            let lead = 0.5 * dir.dot(&(&sf.iistar * &dir)) * r * r;
            assert!((gap - lead).abs() < 5e-2 * r * r, "r={r} gap={gap} lead={lead}");
        }
    }

    #[test]
    fn curvature_identities_on_graphs() {
        let fd = FdConfig::default();
        for n in [3usize, 4, 5] {
            let mut q = vec![vec![0.0; n]; n];
            q[0][0] = 0.05;
            q[1][n - 1] = -0.04;
            let mut a = vec![0.0; n];
            a[n - 1] = 0.1;
            let specs = vec![
                FactorSpec::constant(1.0),
                FactorSpec::constant(0.8).plus(FactorSpec::Linear { a }),
                FactorSpec::constant(1.2).plus(FactorSpec::Quadratic { q }),
            ];
            for spec in specs {
                let g = graph(n, spec);
                for s in low_discrepancy(n, 3) {
                    let (chart, y) = at(s.as_slice());
                    let cs = curvature_star(&g, &chart, &y, &fd).unwrap();
                    assert!(cs.max_sectional_gap() < 1e-6, "n={n} gap {}", cs.max_sectional_gap());
                    assert!(cs.codazzi_defect < 1e-5, "codazzi {}", cs.codazzi_defect);
                    let col = |i: usize| star_forms(&g, &chart, &y).unwrap().eigenframe.column(i).into_owned();
                    assert!((cs.gauss.sectional(&col(0), &col(1)) - cs.sectionals[0].formula).abs() < 1e-10);
                }
            }
        }
        let g = graph(3, FactorSpec::constant(1.0));
        let (chart, y) = at(&[1.0, 0.0, 0.0]);
        let cs = curvature_star(&g, &chart, &y, &fd).unwrap();
        assert!((cs.kstar.unwrap() - (-2.0f64).exp()).abs() < 1e-12);
        let g = graph(3, FactorSpec::constant(0.0));
        let cs = curvature_star(&g, &chart, &y, &fd).unwrap();
        assert!((cs.kstar.unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cone_model_embedding() {
        let xi = Horosphere::new(MVec::new(vec![2.0, 0.0, 1.2, 1.6])).unwrap();
        let q = cone_embed(&xi);
        assert!((q.norm_sq() - 1.0).abs() < 1e-15);
        let v = MVec::new(vec![0.0, 1.0, 0.0, 0.0]);
        let w = MVec::new(vec![0.0, 0.0, 1.6, -1.2]).axpy(0.7, xi.vec());
        let lhs = cone_embed_tangent(&v).inner(&cone_embed_tangent(&w));
        assert_eq!(lhs, v.inner(&w));
        let line = cone_embed(&xi.shifted(0.3));
        let along = q.axpy(0.3f64.exp() - 1.0, &cone_embed_tangent(xi.vec()));
        assert!((line - along).euclid_norm() < 1e-14);
    }

    #[test]
    fn boundary_maps_are_conformal() {
        let h = TGHyperplane { pole: HPoint::origin(3) };
        let l = 0.8f64;
        let tr = make_isometry(&IsometrySpec::Translation {
            point: HPoint::origin(3),
            direction: MVec::basis(4, 1),
            length: l,
        })
        .unwrap();
        let dirs = low_discrepancy(3, 30);
        let rep = boundary_conformal_report(&tr, &h, &dirs).unwrap();
        assert!(rep.max_anisotropy < 1e-10);
        let axis = vec![DVector::from_vec(vec![1.0, 0.0, 0.0])];
        let rep = boundary_conformal_report(&tr, &h, &axis).unwrap();
        assert!((rep.factors[0] - (-l).exp()).abs() < 1e-12);
        let rot = make_isometry(&IsometrySpec::Rotation {
            center: HPoint::origin(3),
            plane: (MVec::basis(4, 1), MVec::basis(4, 3)),
            angle: 0.9,
        })
        .unwrap();
        let rep = boundary_conformal_report(&rot, &h, &dirs).unwrap();
        assert!(rep.factors.iter().all(|f| (f - 1.0).abs() < 1e-12));
        let id = Isometry::identity(3);
        let xi = Horosphere::new(MVec::new(vec![1.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(horo_isometry(&id, &xi), xi);
    }

    #[test]
    fn isometries_commute_with_charts() {
        let g = make_isometry(&IsometrySpec::Translation {
            point: HPoint::origin(3),
            direction: MVec::new(vec![0.0, 0.3, -0.4, 0.5]),
            length: 0.9,
        })
        .unwrap();
        let phi = ChartPhi::new(HPoint::origin(3));
        let moved = ChartPhi {
            base: g.apply_point(phi.base()),
            frame: phi.frame().iter().map(|f| g.apply(f)).collect(),
        };
        for s in low_discrepancy(3, 20) {
            let xi = phi.from_chart(&s, 0.4);
            let (s2, t2) = moved.to_chart(&g.apply_horosphere(&xi));
            assert!((s2 - &s).norm() < 1e-12 && (t2 - 0.4).abs() < 1e-12);
        }
    }
}
