//! Conformal metrics `h = e^{2u} can` on S^{n-1}: their curvature, the
//! H- and C-admissibility tests, and reconstruction of the hypersurface
//! whose horospherical metric is `h`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duality::dualize;
use crate::error::{GeomError, Result};
use crate::factor::ConformalFactor;
use crate::horospace::{star_forms, GraphSurface, TGHyperplane, tangent_hyperplane};
use crate::hypersurface::{build_surface, FamilySpec, Site, SurfaceFamily};
use crate::lorentz::HPoint;
use crate::numeric::{sym_gen_eigen, symmetrize};
use crate::sphere::{low_discrepancy, product_grid, Jet2, SphereChart};

pub const ADMISSIBILITY_EPS: f64 = 1e-9;
/// Allowed gap between the Hessian and Ricci routes.
pub const ROUTE_TOL: f64 = 1e-6;

/// Ricci data of `h` at one point, in an h-orthonormal frame that
/// diagonalizes the Ricci form.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub ric: DMatrix<f64>,
    pub s_scalar: f64,
    /// Columns are the frame vectors in chart coordinates.
    pub frame: DMatrix<f64>,
    /// Chart components of `ric_h` and `h`.
    pub ric_chart: DMatrix<f64>,
    pub h_chart: DMatrix<f64>,
}

/// Ricci and scalar curvature of `e^{2u} can` at the center of `chart`
/// (`y = 0`, where the round Christoffels vanish).
pub fn conformal_curvature(u: &ConformalFactor, chart: &SphereChart) -> Result<CurvatureData> {
    let m = chart.dim();
    let y = DVector::zeros(m);
    let jet = u.chart_jet(chart, &y)?;
    conformal_curvature_from_jet(&jet, m)
}

fn conformal_curvature_from_jet(jet: &Jet2, m: usize) -> Result<CurvatureData> {
    let mf = m as f64;
    let g = DMatrix::<f64>::identity(m, m);
    let du = &jet.grad;
    let lap = jet.hess.trace();
    let grad2 = du.norm_squared();
    let ric_chart = symmetrize(
        &(&g * (mf - 1.0) - (&jet.hess - du * du.transpose()) * (mf - 2.0)
            - &g * (lap + (mf - 2.0) * grad2)),
    );
    let e2u = (2.0 * jet.value).exp();
    let s_scalar = (mf * (mf - 1.0) - 2.0 * (mf - 1.0) * lap - (mf - 2.0) * (mf - 1.0) * grad2) / e2u;
    let h_chart = g * e2u;
    let (vals, frame) = sym_gen_eigen(&ric_chart, &h_chart)?;
    Ok(CurvatureData {
        ric: DMatrix::from_diagonal(&vals),
        s_scalar,
        frame,
        ric_chart,
        h_chart,
    })
}

/// Principal curvatures of the dual graph recovered from the Ricci form.
pub fn principal_from_ricci(cd: &CurvatureData, n: usize) -> Result<Vec<f64>> {
    if n < 4 {
        return Err(GeomError::NTooSmall { n });
    }
    let a = (n - 2) as f64;
    let b = (n - 3) as f64;
    let mut k: Vec<f64> = (0..cd.ric.nrows())
        .map(|i| (cd.s_scalar - 2.0 * a * cd.ric[(i, i)]) / (2.0 * a * b) + 0.5)
        .collect();
    k.sort_by(f64::total_cmp);
    Ok(k)
}

/// `2 ric - (S / (n-2)) h - (n-3) h` in chart components.
pub fn ricci_form(cd: &CurvatureData, n: usize) -> DMatrix<f64> {
    let a = (n - 2) as f64;
    let b = (n - 3) as f64;
    &cd.ric_chart * 2.0 - &cd.h_chart * (cd.s_scalar / a + b)
}

/// Values of `2(n-2) ric - S h` on the frame, to be compared with the
/// window `(-(n-2)(n-3), (n-2)(n-3))`.
pub fn window_values(cd: &CurvatureData, n: usize) -> Vec<f64> {
    let a = (n - 2) as f64;
    (0..cd.ric.nrows())
        .map(|i| 2.0 * a * cd.ric[(i, i)] - cd.s_scalar)
        .collect()
}

/// The factor `u_x` normalized at `x`: `u_x = u + log(-<p, x0 + s>)` with
/// `p` the pole of the tangent hyperplane at `x`.
#[derive(Clone, Debug)]
pub struct NormalizedFactor {
    graph: GraphSurface,
    tangent: TGHyperplane,
    at: DVector<f64>,
}

impl NormalizedFactor {
    pub fn pole(&self) -> &HPoint {
        &self.tangent.pole
    }

    pub fn base_direction(&self) -> &DVector<f64> {
        &self.at
    }

    pub fn value(&self, s: &DVector<f64>) -> f64 {
        let lift = self.graph.lift(s);
        self.graph.factor().value(s) + (-self.tangent.pole.vec().inner(&lift)).ln()
    }

    pub fn jet(&self, chart: &SphereChart, y: &DVector<f64>) -> Result<Jet2> {
        let u = self.graph.factor().chart_jet(chart, y)?;
        let t = self.tangent.height_jet(&self.graph, chart, y);
        Ok(Jet2 {
            value: u.value - t.value,
            grad: &u.grad - &t.grad,
            hess: &u.hess - &t.hess,
        })
    }

    /// Eigenvalues of the Hessian of `u_x` at `x` with respect to `h`.
    pub fn hessian_eigenvalues(&self) -> Result<Vec<f64>> {
        let chart = SphereChart::centered(&self.at)?;
        let y = DVector::zeros(chart.dim());
        let j = self.jet(&chart, &y)?;
        let h = chart.round_metric(&y) * (2.0 * self.graph.factor().value(&self.at)).exp();
        let (k, _) = sym_gen_eigen(&symmetrize(&j.hess), &h)?;
        Ok(k.iter().copied().collect())
    }
}

pub fn normalized_factor(g: &GraphSurface, x: &DVector<f64>) -> Result<NormalizedFactor> {
    let chart = SphereChart::centered(x)?;
    let y = DVector::zeros(chart.dim());
    let tangent = tangent_hyperplane(g, &chart, &y)?;
    Ok(NormalizedFactor {
        graph: g.clone(),
        tangent,
        at: chart.eval(&y).point,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissibilityClass {
    HAdmissible,
    CAdmissible,
    Neither,
    Boundary,
}

impl std::fmt::Display for AdmissibilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdmissibilityClass::HAdmissible => "h_admissible",
            AdmissibilityClass::CAdmissible => "c_admissible",
            AdmissibilityClass::Neither => "neither",
            AdmissibilityClass::Boundary => "boundary",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub direction: Vec<f64>,
    /// Hessian-route eigenvalues, ascending.
    pub kstar: Vec<f64>,
    /// Ricci-route eigenvalues (n >= 4), ascending.
    pub kstar_ricci: Option<Vec<f64>>,
    /// Largest eigenvalue of the Ricci form w.r.t. `h` (n >= 4).
    pub form_max: Option<f64>,
    pub window: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub n: usize,
    pub class: AdmissibilityClass,
    pub samples: Vec<SampleRecord>,
    pub min_kstar: f64,
    pub max_kstar: f64,
    /// `min k*` for the H test, `min(min k*, 1 - max k*)` for the C test.
    pub worst_margin: f64,
    pub worst_sample: usize,
    /// Largest gap between the two routes (n >= 4).
    pub route_gap: Option<f64>,
    pub routes_agree: bool,
    /// Extremes of `1 - k_i - k_j` over the grid.
    pub min_sectional: f64,
    pub max_sectional: f64,
}

impl AdmissibilityReport {
    pub fn is_h_admissible(&self) -> bool {
        matches!(
            self.class,
            AdmissibilityClass::HAdmissible | AdmissibilityClass::CAdmissible
        )
    }

    pub fn is_c_admissible(&self) -> bool {
        self.class == AdmissibilityClass::CAdmissible
    }

    pub fn worst_direction(&self) -> &[f64] {
        &self.samples[self.worst_sample].direction
    }

    pub fn summary(&self) -> String {
        match self.class {
            AdmissibilityClass::Boundary => format!(
                "boundary: Hessian eigenvalues 0 (min {:.3e}) at sample {}",
                self.min_kstar, self.worst_sample
            ),
            c => format!(
                "{c}: k* in [{:.9}, {:.9}], worst margin {:.3e} at sample {}",
                self.min_kstar, self.max_kstar, self.worst_margin, self.worst_sample
            ),
        }
    }
}

/// Default certification grid: 2000 low-discrepancy points on S^2, a
/// 32-per-axis product grid above.
pub fn default_grid(n: usize) -> Vec<DVector<f64>> {
    if n == 3 {
        low_discrepancy(3, 2000)
    } else {
        product_grid(n, 32)
    }
}

fn sample(u: &ConformalFactor, g: &GraphSurface, s: &DVector<f64>) -> Result<SampleRecord> {
    let n = u.n();
    let chart = SphereChart::centered(s)?;
    let y = DVector::zeros(chart.dim());
    let sf = star_forms(g, &chart, &y)?;
    let mut rec = SampleRecord {
        direction: chart.center().iter().copied().collect(),
        kstar: sf.kstar.clone(),
        kstar_ricci: None,
        form_max: None,
        window: None,
    };
    if n >= 4 {
        let cd = conformal_curvature_from_jet(&sf.u, chart.dim())?;
        let (fv, _) = sym_gen_eigen(&ricci_form(&cd, n), &cd.h_chart)?;
        rec.kstar_ricci = Some(principal_from_ricci(&cd, n)?);
        rec.form_max = Some(fv.max());
        rec.window = Some(window_values(&cd, n));
    }
    Ok(rec)
}

/// H- and C-admissibility of `e^{2u} can` certified on `grid`.
pub fn admissibility_test(u: &ConformalFactor, grid: &[DVector<f64>]) -> Result<AdmissibilityReport> {
    if grid.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let n = u.n();
    if let Some(s) = grid.iter().find(|s| s.len() != n) {
        return Err(GeomError::DimensionMismatch {
            expected: n,
            found: s.len(),
        });
    }
    let g = GraphSurface::new(HPoint::origin(n), u.clone())?;
    let samples: Vec<SampleRecord> = grid
        .par_iter()
        .map(|s| sample(u, &g, s))
        .collect::<Result<_>>()?;

    let eps = ADMISSIBILITY_EPS;
    let mut min_k = f64::INFINITY;
    let mut max_k = f64::NEG_INFINITY;
    let mut min_at = 0;
    let mut max_at = 0;
    let mut gap: Option<f64> = None;
    let mut min_sec = f64::INFINITY;
    let mut max_sec = f64::NEG_INFINITY;
    for (idx, rec) in samples.iter().enumerate() {
        let lo = rec.kstar[0];
        let hi = rec.kstar[rec.kstar.len() - 1];
        if lo < min_k {
            min_k = lo;
            min_at = idx;
        }
        if hi > max_k {
            max_k = hi;
            max_at = idx;
        }
        if let Some(kr) = &rec.kstar_ricci {
            let d = kr
                .iter()
                .zip(&rec.kstar)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            gap = Some(gap.map_or(d, |g: f64| g.max(d)));
        }
        let k = &rec.kstar;
        for i in 0..k.len() {
            for j in i + 1..k.len() {
                let sec = 1.0 - k[i] - k[j];
                min_sec = min_sec.min(sec);
                max_sec = max_sec.max(sec);
            }
        }
    }
    let class = if min_k > eps {
        if max_k < 1.0 - eps {
            AdmissibilityClass::CAdmissible
        } else {
            AdmissibilityClass::HAdmissible
        }
    } else if min_k >= -eps {
        AdmissibilityClass::Boundary
    } else {
        AdmissibilityClass::Neither
    };
    let (worst_margin, worst_sample) = if class == AdmissibilityClass::CAdmissible && 1.0 - max_k < min_k {
        (1.0 - max_k, max_at)
    } else {
        (min_k, min_at)
    };
    Ok(AdmissibilityReport {
        n,
        class,
        samples,
        min_kstar: min_k,
        max_kstar: max_k,
        worst_margin,
        worst_sample,
        route_gap: gap,
        routes_agree: gap.is_none_or(|g| g <= ROUTE_TOL),
        min_sectional: min_sec,
        max_sectional: max_sec,
    })
}

/// The hypersurface of H^n whose horospherical metric is `e^{2u} can`,
/// centered at `x0`. Requires H-admissibility on `grid`.
pub fn reconstruct_surface(
    u: &ConformalFactor,
    x0: &HPoint,
    grid: &[DVector<f64>],
) -> Result<(SurfaceFamily, AdmissibilityReport)> {
    let report = admissibility_test(u, grid)?;
    if !report.is_h_admissible() {
        return Err(GeomError::NotAdmissible {
            class: report.class.to_string(),
            worst_margin: report.worst_margin,
            worst_sample: report.worst_sample,
        });
    }
    let fam = build_surface(
        u.n(),
        &FamilySpec::Reconstructed {
            base: Some(x0.vec().to_vec()),
            factor: u.spec().clone(),
        },
    )?;
    Ok((fam, report))
}

/// Largest relative deviation of the horospherical metric of the
/// reconstructed surface from `e^{2u} can` over `grid`.
pub fn roundtrip_check(u: &ConformalFactor, x0: &HPoint, grid: &[DVector<f64>]) -> Result<f64> {
    let (fam, _) = reconstruct_surface(u, x0, grid)?;
    roundtrip_deviation(&fam, u, grid)
}

pub fn roundtrip_deviation(fam: &SurfaceFamily, u: &ConformalFactor, grid: &[DVector<f64>]) -> Result<f64> {
    let devs: Vec<f64> = grid
        .par_iter()
        .map(|s| -> Result<f64> {
            let site = Site::on_sphere(s)?;
            let Site::Sphere { chart, y } = &site else {
                unreachable!()
            };
            let dual = dualize(&fam.jet(&site)?)?;
            let want = chart.round_metric(y) * (2.0 * u.value(s)).exp();
            Ok((&dual.istar_pullback - &want).abs().max() / want.abs().max())
        })
        .collect::<Result<_>>()?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::FactorSpec;
    use crate::numeric::fd_riemann;

    const KSTAR_1: f64 = 0.4323324;

    fn quad(n: usize, eps: f64) -> ConformalFactor {
        let q = DMatrix::from_fn(n, n, |i, j| if i == j { [0.05, -0.03, 0.02, 0.01, -0.02][i] } else { 0.01 * ((i + j) % 3) as f64 });
        let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| eps * q[(i, j)]).collect()).collect();
        ConformalFactor::new(n, FactorSpec::constant(1.0).plus(FactorSpec::Quadratic { q })).unwrap()
    }

    #[test]
    fn round_and_constant_curvature() {
        let chart = SphereChart::centered(&DVector::from_vec(vec![0.0, 0.6, 0.0, 0.8])).unwrap();
        let cd = conformal_curvature(&ConformalFactor::constant(4, 0.0).unwrap(), &chart).unwrap();
        assert!((&cd.ric_chart - DMatrix::identity(3, 3) * 2.0).abs().max() < 1e-14);
        assert!((cd.s_scalar - 6.0).abs() < 1e-14);
        assert!((cd.ric.trace() - cd.s_scalar).abs() < 1e-12);
        assert!(principal_from_ricci(&cd, 4).unwrap().iter().all(|k| k.abs() < 1e-14));
        assert!(ricci_form(&cd, 4).abs().max() < 1e-14);

        let cd = conformal_curvature(&ConformalFactor::constant(4, 1.0).unwrap(), &chart).unwrap();
        assert!((&cd.ric_chart - DMatrix::identity(3, 3) * 2.0).abs().max() < 1e-14);
        assert!((cd.s_scalar - 6.0 * (-2.0f64).exp()).abs() < 1e-14);
        assert!((ricci_form(&cd, 4)[(0, 0)] - (1.0 - 1f64.exp().powi(2))).abs() < 1e-12);
        assert!((ricci_form(&cd, 4)[(0, 0)] + 6.3890561).abs() < 1e-7);
        for w in window_values(&cd, 4) {
            assert!((w - 0.2706706).abs() < 1e-7);
        }
        for k in principal_from_ricci(&cd, 4).unwrap() {
            assert!((k - KSTAR_1).abs() < 1e-7);
        }
        let cd3 = conformal_curvature(&ConformalFactor::constant(3, 1.0).unwrap(), &SphereChart::centered(&DVector::from_vec(vec![0.0, 0.0, 1.0])).unwrap()).unwrap();
        assert!(matches!(principal_from_ricci(&cd3, 3), Err(GeomError::NTooSmall { n: 3 })));
    }

    #[test]
    fn ricci_matches_finite_differences() {
        for n in 3..=5 {
            let a: Vec<f64> = (0..n).map(|i| 0.1 * (1.0 + i as f64) / n as f64).collect();
            let u = ConformalFactor::new(n, FactorSpec::Linear { a }).unwrap();
            for s in low_discrepancy(n, 5) {
                let chart = SphereChart::centered(&s).unwrap();
                let cd = conformal_curvature(&u, &chart).unwrap();
                let metric = |y: &DVector<f64>| -> Result<DMatrix<f64>> {
                    Ok(chart.round_metric(y) * (2.0 * u.chart_jet(&chart, y)?.value).exp())
                };
                let r = fd_riemann(&metric, &DVector::zeros(n - 1), 1e-3).unwrap();
                assert!((r.ricci().unwrap() - &cd.ric_chart).abs().max() < 1e-5, "n = {n}");
            }
        }
    }

    #[test]
    fn normalized_factor_of_constants() {
        let c = 1.0f64;
        let g = GraphSurface::new(HPoint::origin(3), ConformalFactor::constant(3, c).unwrap()).unwrap();
        let v = DVector::from_vec(vec![0.36, 0.48, 0.8]);
        let ux = normalized_factor(&g, &v).unwrap();
        assert!(ux.value(&v).abs() < 1e-12);
        for s in low_discrepancy(3, 10) {
            let want = c + (c.cosh() - c.sinh() * v.dot(&s)).ln();
            assert!((ux.value(&s) - want).abs() < 1e-12);
        }
        let chart = SphereChart::centered(&v).unwrap();
        let j = ux.jet(&chart, &DVector::zeros(2)).unwrap();
        assert!(j.value.abs() < 1e-12 && j.grad.norm() < 1e-12);
        for k in ux.hessian_eigenvalues().unwrap() {
            assert!((k - KSTAR_1).abs() < 1e-7);
        }
        let flat = GraphSurface::new(HPoint::origin(3), ConformalFactor::constant(3, 0.0).unwrap()).unwrap();
        let u0 = normalized_factor(&flat, &v).unwrap();
        for s in low_discrepancy(3, 10) {
            assert!(u0.value(&s).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_factor_is_critical_at_its_base() {
        let u = quad(3, 1.0);
        let g = GraphSurface::new(HPoint::origin(3), u.clone()).unwrap();
        for s in low_discrepancy(3, 12) {
            let ux = normalized_factor(&g, &s).unwrap();
            let chart = SphereChart::centered(&s).unwrap();
            let j = ux.jet(&chart, &DVector::zeros(2)).unwrap();
            assert!(j.value.abs() < 1e-9 && j.grad.norm() < 1e-9);
            let sf = star_forms(&g, &chart, &DVector::zeros(2)).unwrap();
            for (a, b) in ux.hessian_eigenvalues().unwrap().iter().zip(&sf.kstar) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn classes() {
        let r = admissibility_test(&ConformalFactor::constant(3, 1.0).unwrap(), &low_discrepancy(3, 50)).unwrap();
        assert_eq!(r.class, AdmissibilityClass::CAdmissible);
        assert!((r.min_kstar - KSTAR_1).abs() < 1e-7 && (r.max_kstar - KSTAR_1).abs() < 1e-7);
        let r = admissibility_test(&ConformalFactor::constant(4, 1.0).unwrap(), &product_grid(4, 4)).unwrap();
        assert_eq!(r.class, AdmissibilityClass::CAdmissible);
        assert!(r.routes_agree && r.route_gap.unwrap() < 1e-10);
        assert!(r.samples.iter().all(|s| s.form_max.unwrap() < 0.0));
        for n in 3..=5 {
            let r = admissibility_test(&ConformalFactor::constant(n, 0.0).unwrap(), &product_grid(n, 3)).unwrap();
            assert_eq!(r.class, AdmissibilityClass::Boundary);
            assert!(r.summary().starts_with("boundary: Hessian eigenvalues 0"));
        }
        let r = admissibility_test(&ConformalFactor::constant(3, -0.5).unwrap(), &low_discrepancy(3, 20)).unwrap();
        assert_eq!(r.class, AdmissibilityClass::Neither);
        assert!(admissibility_test(&ConformalFactor::constant(3, 1.0).unwrap(), &[]).is_err());
    }

    #[test]
    fn routes_agree_on_perturbations() {
        for n in 4..=5 {
            let r = admissibility_test(&quad(n, 1.0), &product_grid(n, 4)).unwrap();
            assert!(r.is_c_admissible());
            assert!(r.route_gap.unwrap() < 1e-10);
            assert!(r.max_sectional < 1.0 && r.min_sectional > -1.0);
        }
    }

    #[test]
    fn reconstruction() {
        let grid = low_discrepancy(3, 60);
        let x0 = HPoint::origin(3);
        for c in [1.0, 2.0] {
            let u = ConformalFactor::constant(3, c).unwrap();
            let (fam, _) = reconstruct_surface(&u, &x0, &grid).unwrap();
            let (center, r) = fam.sphere_data().unwrap();
            assert_eq!(center, x0);
            assert_eq!(r, c);
            assert!(roundtrip_check(&u, &x0, &grid).unwrap() < 1e-9);
        }
        let dev = roundtrip_check(&quad(3, 1.0), &x0, &low_discrepancy(3, 12)).unwrap();
        assert!(dev < 1e-5, "{dev}");
        let err = reconstruct_surface(&ConformalFactor::constant(3, 0.0).unwrap(), &x0, &grid).unwrap_err();
        assert!(matches!(err, GeomError::NotAdmissible { .. }));
    }
}
