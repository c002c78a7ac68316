//! Immersed hypersurfaces of H^n given by analytic 2-jets: fundamental
//! forms, shape operator, convexity classes, Gauss map and test families.
//!
//! Conventions: `B` is defined by `dN = B dx` in chart coordinates and the
//! unit normal `N` points toward the ideal point of the tangent horosphere,
//! so that `x + N` is the null vector of that horosphere. Geodesic spheres
//! with outward normal get `B = coth(t) E`, horospheres oriented toward
//! their ideal point get `B = -E`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::duality::envelope_jet;
use crate::error::{GeomError, Result};
use crate::factor::{ConformalFactor, FactorSpec};
use crate::horospace::GraphSurface;
use crate::isometry::{hyperplane_frame, Isometry};
use crate::lorentz::{gram, tangent_frame, DeSitterPoint, HPoint, Horosphere, IdealPoint, MVec};
use crate::numeric::{sym_gen_eigen, symmetrize, FdConfig};
use crate::sphere::{halton_cube, low_discrepancy, SphereChart};

/// Where a jet is evaluated: a sphere chart and chart coordinates, or
/// coordinates of a flat (single-chart) parametrization.
#[derive(Clone, Debug)]
pub enum Site {
    Sphere { chart: SphereChart, y: DVector<f64> },
    Flat { y: DVector<f64> },
}

impl Site {
    /// The center of a chart centered at the unit vector `s`.
    pub fn on_sphere(s: &DVector<f64>) -> Result<Site> {
        let chart = SphereChart::centered(s)?;
        let y = DVector::zeros(chart.dim());
        Ok(Site::Sphere { chart, y })
    }

    pub fn flat(y: DVector<f64>) -> Site {
        Site::Flat { y }
    }

    pub fn y(&self) -> &DVector<f64> {
        match self {
            Site::Sphere { y, .. } | Site::Flat { y } => y,
        }
    }

    /// Same chart, other coordinates.
    pub fn with_y(&self, y: DVector<f64>) -> Site {
        match self {
            Site::Sphere { chart, .. } => Site::Sphere {
                chart: chart.clone(),
                y,
            },
            Site::Flat { .. } => Site::Flat { y },
        }
    }

    /// Unit direction of a sphere site.
    pub fn direction(&self) -> Option<DVector<f64>> {
        match self {
            Site::Sphere { chart, y } => Some(chart.eval(y).point),
            Site::Flat { .. } => None,
        }
    }
}

/// A sample of an immersion: position and first two chart derivatives.
#[derive(Clone, Debug)]
pub struct ImmersionJet {
    pub chart_point: DVector<f64>,
    pub x: HPoint,
    pub dx: Vec<MVec>,
    pub d2x: Vec<Vec<MVec>>,
    /// Fixes the sign of the normal: `<N, orientation> > 0`.
    pub orientation: MVec,
    /// Derivatives of the normal field when the builder knows them.
    pub dnormal: Option<Vec<MVec>>,
}

impl ImmersionJet {
    pub fn new(
        chart_point: DVector<f64>,
        x: HPoint,
        dx: Vec<MVec>,
        d2x: Vec<Vec<MVec>>,
        orientation: MVec,
        dnormal: Option<Vec<MVec>>,
    ) -> Result<Self> {
        let m = dx.len();
        if chart_point.len() != m || d2x.len() != m || d2x.iter().any(|r| r.len() != m) {
            return Err(GeomError::DimensionMismatch {
                expected: m,
                found: chart_point.len(),
            });
        }
        for v in &dx {
            let r = v.inner(x.vec()).abs() / v.euclid_norm().max(1.0);
            if r > 1e-8 {
                return Err(GeomError::NotTangent { residual: r });
            }
        }
        Ok(ImmersionJet {
            chart_point,
            x,
            dx,
            d2x,
            orientation,
            dnormal,
        })
    }

    /// Intrinsic dimension n - 1.
    pub fn dim(&self) -> usize {
        self.dx.len()
    }

    /// Image under an isometry; chart coordinates are carried along.
    pub fn transformed(&self, g: &Isometry) -> ImmersionJet {
        ImmersionJet {
            chart_point: self.chart_point.clone(),
            x: g.apply_point(&self.x),
            dx: self.dx.iter().map(|v| g.apply(v)).collect(),
            d2x: self
                .d2x
                .iter()
                .map(|r| r.iter().map(|v| g.apply(v)).collect())
                .collect(),
            orientation: g.apply(&self.orientation),
            dnormal: self
                .dnormal
                .as_ref()
                .map(|d| d.iter().map(|v| g.apply(v)).collect()),
        }
    }
}

/// First, second and third fundamental forms in chart coordinates.
#[derive(Clone, Debug)]
pub struct FrameForms {
    pub i: DMatrix<f64>,
    pub ii: DMatrix<f64>,
    pub iii: DMatrix<f64>,
    /// Column `j` holds the chart components of `∂_j N`.
    pub b: DMatrix<f64>,
    pub normal: MVec,
    /// Principal curvatures, ascending.
    pub k: Vec<f64>,
    pub h_mean: f64,
    /// `det B - 1`, for surfaces in H^3 only.
    pub k_gauss: Option<f64>,
}

fn unit_normal(jet: &ImmersionJet, i_inv: &DMatrix<f64>) -> Result<MVec> {
    let x = jet.x.vec();
    let r = &jet.orientation;
    let mut nv = r.axpy(r.inner(x), x);
    let proj: Vec<f64> = jet.dx.iter().map(|t| r.inner(t)).collect();
    for (a, ta) in jet.dx.iter().enumerate() {
        let c: f64 = (0..jet.dim()).map(|b| i_inv[(a, b)] * proj[b]).sum();
        nv = nv.axpy(-c, ta);
    }
    let q = nv.norm_sq();
    if !(q > 1e-20 * r.euclid_norm().powi(2).max(1e-300)) || !q.is_finite() {
        return Err(GeomError::DegenerateNormal);
    }
    Ok(nv.scale(1.0 / q.sqrt()))
}

pub fn forms_at(jet: &ImmersionJet) -> Result<FrameForms> {
    let m = jet.dim();
    let i = symmetrize(&gram(&jet.dx, &jet.dx));
    let chol = i.clone().cholesky().ok_or(GeomError::RankDeficient)?;
    let i_inv = chol.inverse();
    let normal = unit_normal(jet, &i_inv)?;
    let ii = symmetrize(&DMatrix::from_fn(m, m, |a, b| -normal.inner(&jet.d2x[a][b])));
    let b = &i_inv * &ii;
    let iii = symmetrize(&(&ii * &i_inv * &ii));
    let (k, _) = sym_gen_eigen(&ii, &i)?;
    let k: Vec<f64> = k.iter().copied().collect();
    let h_mean = b.trace() / m as f64;
    let k_gauss = (m == 2).then(|| b.determinant() - 1.0);
    Ok(FrameForms {
        i,
        ii,
        iii,
        b,
        normal,
        k,
        h_mean,
        k_gauss,
    })
}

/// `I + 2 II + III`.
pub fn horospherical_metric_direct(forms: &FrameForms) -> DMatrix<f64> {
    &forms.i + &forms.ii * 2.0 + &forms.iii
}

pub const CONVEXITY_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    /// Some principal curvature equals -1: the dual is not immersed.
    DualSingular,
    /// All principal curvatures positive.
    Convex,
    /// Weakly convex (some curvature within ε of 0, none below); in
    /// particular strictly H-convex.
    Weakly,
    /// All principal curvatures above -1.
    StrictlyHConvex,
    None,
}

pub fn classify_convexity(forms: &FrameForms) -> Convexity {
    let eps = CONVEXITY_EPS;
    if forms.k.iter().any(|k| (k + 1.0).abs() <= eps) {
        Convexity::DualSingular
    } else if forms.k.iter().all(|&k| k > eps) {
        Convexity::Convex
    } else if forms.k.iter().all(|&k| k >= -eps) {
        Convexity::Weakly
    } else if forms.k.iter().all(|&k| k > -1.0 + eps) {
        Convexity::StrictlyHConvex
    } else {
        Convexity::None
    }
}

/// Ideal point of the tangent horosphere, i.e. of the null ray `x + N`.
pub fn gauss_map(jet: &ImmersionJet) -> Result<IdealPoint> {
    let forms = forms_at(jet)?;
    IdealPoint::from_null(&(jet.x.vec() + &forms.normal))
}

/// Builder description of a surface family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    /// Sphere of radius `radius` around `center` (default: the origin),
    /// outward normal.
    GeodesicSphere {
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
    },
    /// Totally geodesic hyperplane `pole^⊥`, normal `pole`.
    TotallyGeodesicHyperplane { pole: Vec<f64> },
    /// Points at signed distance `distance` from `pole^⊥`, normal pointing
    /// away from it.
    Equidistant { pole: Vec<f64>, distance: f64 },
    /// Euclidean ellipsoid with the given semi-axes in the Klein ball,
    /// outward normal.
    KleinQuadric { axes: Vec<f64> },
    /// The horosphere of `xi`, normal toward its ideal point (or away from
    /// it when `reversed`).
    Horosphere {
        xi: Vec<f64>,
        #[serde(default)]
        reversed: bool,
    },
    /// Envelope of the graph `e^{u(s)} (x0 + s)` over the base point.
    Reconstructed {
        #[serde(default)]
        base: Option<Vec<f64>>,
        factor: FactorSpec,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    GeodesicSphere,
    TotallyGeodesicHyperplane,
    Equidistant,
    KleinQuadric,
    Horosphere,
    Reconstructed,
}

#[derive(Clone, Debug)]
enum Geometry {
    Sphere {
        center: HPoint,
        frame: Vec<MVec>,
        radius: f64,
    },
    Equidistant {
        frame: Vec<MVec>,
        pole: MVec,
        distance: f64,
    },
    Klein {
        axes: DVector<f64>,
    },
    Horosphere {
        xi: MVec,
        m: MVec,
        e: Vec<MVec>,
        reversed: bool,
    },
    Reconstructed {
        graph: GraphSurface,
    },
}

/// A parametrized family of hypersurface samples with analytic jets (or
/// finite-difference jets for reconstructed envelopes).
#[derive(Clone, Debug)]
pub struct SurfaceFamily {
    n: usize,
    kind: FamilyKind,
    geometry: Geometry,
    transform: Option<Isometry>,
    fd: FdConfig,
}

fn mvec_of(v: &[f64], n: usize) -> Result<MVec> {
    if v.len() != n + 1 {
        return Err(GeomError::DimensionMismatch {
            expected: n + 1,
            found: v.len(),
        });
    }
    Ok(MVec::from_slice(v))
}

fn combine(frame: &[MVec], coeffs: &DVector<f64>) -> MVec {
    let mut out = MVec::zeros(frame[0].len());
    for (f, &c) in frame.iter().zip(coeffs.iter()) {
        if c != 0.0 {
            out = out.axpy(c, f);
        }
    }
    out
}

/// Builds a family in H^n.
pub fn build_surface(n: usize, spec: &FamilySpec) -> Result<SurfaceFamily> {
    if n < 3 {
        return Err(GeomError::InvalidParameter(format!(
            "surface families need n >= 3, got {n}"
        )));
    }
    let base_point = |b: &Option<Vec<f64>>| -> Result<HPoint> {
        match b {
            Some(v) => HPoint::new(mvec_of(v, n)?),
            None => Ok(HPoint::origin(n)),
        }
    };
    let (kind, geometry) = match spec {
        FamilySpec::GeodesicSphere { center, radius } => {
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(GeomError::InvalidParameter(format!(
                    "sphere radius must be positive, got {radius}"
                )));
            }
            let center = base_point(center)?;
            let frame = tangent_frame(&center);
            (
                FamilyKind::GeodesicSphere,
                Geometry::Sphere {
                    center,
                    frame,
                    radius: *radius,
                },
            )
        }
        FamilySpec::TotallyGeodesicHyperplane { pole } | FamilySpec::Equidistant { pole, .. } => {
            let distance = match spec {
                FamilySpec::Equidistant { distance, .. } => *distance,
                _ => 0.0,
            };
            if !distance.is_finite() {
                return Err(GeomError::InvalidParameter("non-finite distance".into()));
            }
            let w = DeSitterPoint::new(mvec_of(pole, n)?)?;
            let frame = hyperplane_frame(&w)?;
            let kind = if matches!(spec, FamilySpec::Equidistant { .. }) {
                FamilyKind::Equidistant
            } else {
                FamilyKind::TotallyGeodesicHyperplane
            };
            (
                kind,
                Geometry::Equidistant {
                    frame,
                    pole: w.vec().clone(),
                    distance,
                },
            )
        }
        FamilySpec::KleinQuadric { axes } => {
            if axes.len() != n {
                return Err(GeomError::DimensionMismatch {
                    expected: n,
                    found: axes.len(),
                });
            }
            if axes.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                return Err(GeomError::InvalidParameter(
                    "quadric semi-axes must lie in (0, 1)".into(),
                ));
            }
            (
                FamilyKind::KleinQuadric,
                Geometry::Klein {
                    axes: DVector::from_column_slice(axes),
                },
            )
        }
        FamilySpec::Horosphere { xi, reversed } => {
            let xi = Horosphere::new(mvec_of(xi, n)?)?.vec().clone();
            let x0 = xi[0];
            let mut m = xi.scale(-1.0 / (2.0 * x0 * x0));
            m[0] = 1.0 / (2.0 * x0);
            let dir = xi.spatial() / xi.spatial().norm();
            let chart = SphereChart::centered(&dir)?;
            let e = chart
                .frame()
                .iter()
                .map(|f| {
                    let mut v = MVec::zeros(n + 1);
                    v.0.rows_mut(1, n).copy_from(f);
                    v
                })
                .collect();
            (
                FamilyKind::Horosphere,
                Geometry::Horosphere {
                    xi,
                    m,
                    e,
                    reversed: *reversed,
                },
            )
        }
        FamilySpec::Reconstructed { base, factor } => {
            let base = base_point(base)?;
            let factor = ConformalFactor::new(n, factor.clone())?;
            match factor.as_constant() {
                Some(c) if c > 0.0 => {
                    let frame = tangent_frame(&base);
                    (
                        FamilyKind::Reconstructed,
                        Geometry::Sphere {
                            center: base,
                            frame,
                            radius: c,
                        },
                    )
                }
                _ => (
                    FamilyKind::Reconstructed,
                    Geometry::Reconstructed {
                        graph: GraphSurface::new(base, factor)?,
                    },
                ),
            }
        }
    };
    Ok(SurfaceFamily {
        n,
        kind,
        geometry,
        transform: None,
        fd: FdConfig::default(),
    })
}

impl SurfaceFamily {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Whether sites are sphere charts (closed families) or flat charts.
    pub fn is_spherical(&self) -> bool {
        !matches!(
            self.geometry,
            Geometry::Equidistant { .. } | Geometry::Horosphere { .. }
        )
    }

    /// The graph whose envelope this family is, when it is one.
    pub fn graph(&self) -> Option<&GraphSurface> {
        match &self.geometry {
            Geometry::Reconstructed { graph } => Some(graph),
            _ => None,
        }
    }

    /// Center and radius for sphere families.
    pub fn sphere_data(&self) -> Option<(HPoint, f64)> {
        match &self.geometry {
            Geometry::Sphere { center, radius, .. } => Some((center.clone(), *radius)),
            _ => None,
        }
    }

    pub fn transform(&self) -> Option<&Isometry> {
        self.transform.as_ref()
    }

    /// The family moved by an isometry (composed with any earlier one).
    pub fn transformed(&self, g: &Isometry) -> SurfaceFamily {
        let mut out = self.clone();
        out.transform = Some(match &self.transform {
            Some(h) => g.compose(h),
            None => g.clone(),
        });
        out
    }

    pub fn with_fd(mut self, fd: FdConfig) -> Self {
        self.fd = fd;
        self
    }

    pub fn fd(&self) -> FdConfig {
        self.fd
    }

    /// Deterministic sample sites: low-discrepancy directions for closed
    /// families, Halton points of `[-1, 1]^{n-1}` otherwise.
    pub fn sites(&self, count: usize) -> Result<Vec<Site>> {
        if self.is_spherical() {
            low_discrepancy(self.n, count)
                .iter()
                .map(Site::on_sphere)
                .collect()
        } else {
            Ok(halton_cube(self.n - 1, count, 1.0)
                .into_iter()
                .map(Site::flat)
                .collect())
        }
    }

    pub fn jet(&self, site: &Site) -> Result<ImmersionJet> {
        let jet = self.raw_jet(site)?;
        Ok(match &self.transform {
            Some(g) => jet.transformed(g),
            None => jet,
        })
    }

    fn raw_jet(&self, site: &Site) -> Result<ImmersionJet> {
        let m = self.n - 1;
        let y = site.y();
        if y.len() != m {
            return Err(GeomError::DimensionMismatch {
                expected: m,
                found: y.len(),
            });
        }
        match (&self.geometry, site) {
            (
                Geometry::Sphere {
                    center,
                    frame,
                    radius,
                },
                Site::Sphere { chart, .. },
            ) => {
                let sj = chart.eval(y);
                let (ch, sh) = (radius.cosh(), radius.sinh());
                let v = combine(frame, &sj.point);
                let c = center.vec();
                let x = c.scale(ch).axpy(sh, &v);
                let dv: Vec<MVec> = sj.d.iter().map(|d| combine(frame, d)).collect();
                let dx = dv.iter().map(|d| d.scale(sh)).collect();
                let d2x = sj
                    .dd
                    .iter()
                    .map(|r| r.iter().map(|d| combine(frame, d).scale(sh)).collect())
                    .collect();
                let normal = c.scale(sh).axpy(ch, &v);
                let dn = dv.iter().map(|d| d.scale(ch)).collect();
                ImmersionJet::new(
                    y.clone(),
                    HPoint::new_unchecked(x),
                    dx,
                    d2x,
                    normal,
                    Some(dn),
                )
            }
            (
                Geometry::Equidistant {
                    frame,
                    pole,
                    distance,
                },
                Site::Flat { .. },
            ) => {
                let r = (1.0 + y.norm_squared()).sqrt();
                let mut p = frame[0].scale(r);
                for i in 0..m {
                    p = p.axpy(y[i], &frame[i + 1]);
                }
                let dp: Vec<MVec> = (0..m)
                    .map(|i| frame[i + 1].axpy(y[i] / r, &frame[0]))
                    .collect();
                let (ch, sh) = (distance.cosh(), distance.sinh());
                let d2x = (0..m)
                    .map(|i| {
                        (0..m)
                            .map(|j| {
                                let delta = if i == j { 1.0 } else { 0.0 };
                                frame[0].scale(ch * (delta / r - y[i] * y[j] / (r * r * r)))
                            })
                            .collect()
                    })
                    .collect();
                let x = p.scale(ch).axpy(sh, pole);
                let normal = p.scale(sh).axpy(ch, pole);
                ImmersionJet::new(
                    y.clone(),
                    HPoint::new_unchecked(x),
                    dp.iter().map(|d| d.scale(ch)).collect(),
                    d2x,
                    normal,
                    Some(dp.iter().map(|d| d.scale(sh)).collect()),
                )
            }
            (Geometry::Klein { axes }, Site::Sphere { chart, .. }) => {
                klein_jet(axes, chart, y)
            }
            (Geometry::Horosphere { xi, m: mm, e, reversed }, Site::Flat { .. }) => {
                let a = 0.5 * (1.0 + y.norm_squared());
                let mut x = xi.scale(a) + mm.clone();
                for i in 0..m {
                    x = x.axpy(y[i], &e[i]);
                }
                let dx: Vec<MVec> = (0..m).map(|i| e[i].axpy(y[i], xi)).collect();
                let d2x = (0..m)
                    .map(|i| {
                        (0..m)
                            .map(|j| xi.scale(if i == j { 1.0 } else { 0.0 }))
                            .collect()
                    })
                    .collect();
                let sign = if *reversed { -1.0 } else { 1.0 };
                let normal = (xi - &x).scale(sign);
                let dn = dx.iter().map(|d| d.scale(-sign)).collect();
                ImmersionJet::new(
                    y.clone(),
                    HPoint::new_unchecked(x),
                    dx,
                    d2x,
                    normal,
                    Some(dn),
                )
            }
            (Geometry::Reconstructed { graph }, Site::Sphere { chart, .. }) => {
                envelope_jet(graph, chart, y, &self.fd)
            }
            _ => Err(GeomError::InvalidParameter(
                "site type does not match the family's chart".into(),
            )),
        }
    }
}

fn klein_jet(axes: &DVector<f64>, chart: &SphereChart, y: &DVector<f64>) -> Result<ImmersionJet> {
    let n = axes.len();
    let m = n - 1;
    let sj = chart.eval(y);
    let z = axes.component_mul(&sj.point);
    let dz: Vec<DVector<f64>> = sj.d.iter().map(|d| axes.component_mul(d)).collect();
    let rho = 1.0 / (1.0 - z.norm_squared()).sqrt();
    let lift = |v: &DVector<f64>, head: f64| -> MVec {
        let mut out = MVec::zeros(n + 1);
        out[0] = head;
        out.0.rows_mut(1, n).copy_from(v);
        out
    };
    let one_z = lift(&z, 1.0);
    // first derivative of X(z) = ρ (1, z) along a
    let d1 = |a: &DVector<f64>| lift(a, 0.0).scale(rho).axpy(rho.powi(3) * z.dot(a), &one_z);
    let x = one_z.scale(rho);
    let dx: Vec<MVec> = dz.iter().map(|a| d1(a)).collect();
    let d2x = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let (a, b) = (&dz[i], &dz[j]);
                    let (za, zb) = (z.dot(a), z.dot(b));
                    let second = lift(a, 0.0)
                        .scale(rho.powi(3) * zb)
                        .axpy(rho.powi(3) * za, &lift(b, 0.0))
                        .axpy(rho.powi(3) * a.dot(b) + 3.0 * rho.powi(5) * za * zb, &one_z);
                    second + d1(&axes.component_mul(&sj.dd[i][j]))
                })
                .collect()
        })
        .collect();
    // unnormalized normal (1, A^{-1} σ): orthogonal to (1, Aσ) and (0, A dσ)
    let inv = sj.point.component_div(axes);
    let nt = lift(&inv, 1.0);
    let nu = (inv.norm_squared() - 1.0).sqrt();
    let dn = sj
        .d
        .iter()
        .map(|d| {
            let dinv = d.component_div(axes);
            let dnt = lift(&dinv, 0.0);
            dnt.scale(1.0 / nu).axpy(-inv.dot(&dinv) / nu.powi(3), &nt)
        })
        .collect();
    ImmersionJet::new(
        y.clone(),
        HPoint::new_unchecked(x),
        dx,
        d2x,
        nt.scale(1.0 / nu),
        Some(dn),
    )
}
