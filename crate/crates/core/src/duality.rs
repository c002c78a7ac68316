//! Duality between hypersurfaces of H^n and space-like hypersurfaces of
//! C^n_+: `φ = x + N` in one direction, envelopes of tangent hyperplanes in
//! the other, plus the polar dual in de Sitter space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::factor::{ConformalFactor, FactorSpec};
use crate::horospace::{pole_from_tangent, star_forms, tangent_hyperplane, GraphSurface};
use crate::hypersurface::{
    build_surface, forms_at, horospherical_metric_direct, FamilySpec, FrameForms, ImmersionJet,
    Site, SurfaceFamily,
};
use crate::lorentz::{DeSitterPoint, HPoint, Horosphere, MVec};
use crate::numeric::{
    real_eigenvalues, richardson_first, richardson_second, sym_gen_eigen, symmetrize, FdConfig,
};
use crate::sphere::SphereChart;

/// The dual of one hypersurface sample.
#[derive(Clone, Debug)]
pub struct DualSample {
    pub forms: FrameForms,
    pub phi: Horosphere,
    pub dphi: Vec<MVec>,
    /// `<dφ, dφ>` in chart coordinates.
    pub istar_pullback: DMatrix<f64>,
}

fn normal_derivatives(jet: &ImmersionJet, forms: &FrameForms) -> Vec<MVec> {
    match &jet.dnormal {
        Some(dn) => dn.clone(),
        None => (0..jet.dim())
            .map(|j| {
                let mut v = MVec::zeros(jet.x.vec().len());
                for k in 0..jet.dim() {
                    v = v.axpy(forms.b[(k, j)], &jet.dx[k]);
                }
                v
            })
            .collect(),
    }
}

/// `φ = x + N` with `dφ = dx + dN`; `dN` comes from the jet when known and
/// from `B dx` otherwise.
pub fn dualize(jet: &ImmersionJet) -> Result<DualSample> {
    let forms = forms_at(jet)?;
    let phi = jet.x.vec() + &forms.normal;
    let phi = Horosphere::new(phi)?;
    let dn = normal_derivatives(jet, &forms);
    let dphi: Vec<MVec> = jet.dx.iter().zip(&dn).map(|(a, b)| a + b).collect();
    let m = dphi.len();
    let istar_pullback = symmetrize(&DMatrix::from_fn(m, m, |a, b| dphi[a].inner(&dphi[b])));
    Ok(DualSample {
        forms,
        phi,
        dphi,
        istar_pullback,
    })
}

/// `B* = (E + B)^{-1}`.
pub fn weingarten_inversion(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = b.nrows();
    if let Some(&k) = real_eigenvalues(b)
        .iter()
        .find(|&&k| (k + 1.0).abs() <= 1e-9)
    {
        return Err(GeomError::DualSingular { eigenvalue: k });
    }
    (DMatrix::identity(m, m) + b)
        .try_inverse()
        .ok_or(GeomError::DualSingular { eigenvalue: -1.0 })
}

fn check_star(g: &GraphSurface, chart: &SphereChart, y: &DVector<f64>) -> Result<()> {
    let sf = star_forms(g, chart, y)?;
    if let Some(&k) = sf.kstar.iter().find(|k| k.abs() <= 1e-9) {
        return Err(GeomError::DegenerateStar { eigenvalue: k });
    }
    Ok(())
}

/// The point of H^n dual to the graph at `y`: the pole of its tangent
/// hyperplane.
pub fn envelope_point(g: &GraphSurface, chart: &SphereChart, y: &DVector<f64>) -> Result<HPoint> {
    check_star(g, chart, y)?;
    Ok(tangent_hyperplane(g, chart, y)?.pole)
}

/// Jet of the envelope `y ↦ p(y)` by central differences of the pole.
///
/// The normal is oriented by `ξ - p`. No normal derivatives are attached,
/// so duals of envelopes go through `B dx` with `B` from the second
/// differences.
pub fn envelope_jet(
    g: &GraphSurface,
    chart: &SphereChart,
    y: &DVector<f64>,
    fd: &FdConfig,
) -> Result<ImmersionJet> {
    check_star(g, chart, y)?;
    let m = y.len();
    let pole = |z: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(tangent_hyperplane(g, chart, z)?.pole.vec().0.clone())
    };
    let p = tangent_hyperplane(g, chart, y)?.pole;
    let dx: Vec<MVec> = (0..m)
        .map(|i| richardson_first(&pole, y, i, fd.step).map(MVec))
        .collect::<Result<_>>()?;
    let mut d2x = vec![vec![MVec::zeros(p.vec().len()); m]; m];
    for i in 0..m {
        for j in i..m {
            let v = MVec(richardson_second(&pole, y, i, j, fd.second_step)?);
            d2x[j][i] = v.clone();
            d2x[i][j] = v;
        }
    }
    let xi = g.point(&chart.eval(y).point);
    let normal = xi.vec() - p.vec();
    ImmersionJet::new(y.clone(), p, dx, d2x, normal, None)
}

/// `|dualize(envelope(g))(y) - ξ(y)|` relative to `|ξ(y)|`.
pub fn double_dual_defect(g: &GraphSurface, chart: &SphereChart, y: &DVector<f64>, fd: &FdConfig) -> Result<f64> {
    let jet = envelope_jet(g, chart, y, fd)?;
    let dual = dualize(&jet)?;
    let (xi, _, _) = g.point_jet(chart, y)?;
    Ok((dual.phi.vec() - xi.vec()).euclid_norm() / xi.vec().euclid_norm())
}

/// `|p - x|` where `p` is the envelope point of the dual at one sample.
pub fn sample_double_dual_defect(jet: &ImmersionJet) -> Result<f64> {
    let dual = dualize(jet)?;
    let p = pole_from_tangent(&dual.phi, &dual.dphi)?;
    Ok((p.vec() - jet.x.vec()).euclid_norm() / jet.x.vec().euclid_norm())
}

/// The normal viewed as a point of de Sitter space, with its induced metric.
#[derive(Clone, Debug)]
pub struct DeSitterDual {
    pub point: DeSitterPoint,
    pub dpoint: Vec<MVec>,
    /// `<dN, dN>`
    pub metric: DMatrix<f64>,
    pub forms: FrameForms,
}

pub fn de_sitter_dual(jet: &ImmersionJet) -> Result<DeSitterDual> {
    let forms = forms_at(jet)?;
    let dn = normal_derivatives(jet, &forms);
    let m = dn.len();
    let metric = symmetrize(&DMatrix::from_fn(m, m, |a, b| dn[a].inner(&dn[b])));
    Ok(DeSitterDual {
        point: DeSitterPoint::new(forms.normal.clone())?,
        dpoint: dn,
        metric,
        forms,
    })
}

/// Pullback of the boundary round metric by the Gauss map compared with
/// I*: the two are conformal when the ratio is direction-independent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussConformality {
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl GaussConformality {
    pub fn anisotropy(&self) -> f64 {
        (self.ratio_max - self.ratio_min) / self.ratio_max
    }
}

pub fn gauss_map_conformality(jet: &ImmersionJet) -> Result<GaussConformality> {
    let dual = dualize(jet)?;
    let phi = dual.phi.vec();
    let n = phi.len() - 1;
    let p0 = phi[0];
    let dg: Vec<DVector<f64>> = dual
        .dphi
        .iter()
        .map(|d| (d.spatial() * p0 - phi.spatial() * d[0]) / (p0 * p0))
        .collect();
    let m = dg.len();
    let round = DMatrix::from_fn(m, m, |a, b| dg[a].dot(&dg[b]));
    let (r, _) = sym_gen_eigen(&symmetrize(&round), &dual.istar_pullback)?;
    debug_assert_eq!(r.len(), n - 1);
    Ok(GaussConformality {
        ratio_min: r.min(),
        ratio_max: r.max(),
    })
}

/// Mean/Gauss curvature relation for surfaces in H^3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub k: f64,
    pub h_mean: f64,
    /// `1 - tr (E + B)^{-1}`
    pub kstar_analytic: f64,
    /// `K / (K + 2H + 2)`
    pub kstar_formula: f64,
}

impl RelationReport {
    pub fn discrepancy(&self) -> f64 {
        (self.kstar_analytic - self.kstar_formula).abs()
    }
}

pub fn relation_check(jet: &ImmersionJet) -> Result<RelationReport> {
    let forms = forms_at(jet)?;
    let k = forms.k_gauss.ok_or(GeomError::Unsupported(
        "the curvature relation is stated for surfaces in H^3".into(),
    ))?;
    let bstar = weingarten_inversion(&forms.b)?;
    Ok(RelationReport {
        k,
        h_mean: forms.h_mean,
        kstar_analytic: 1.0 - bstar.trace(),
        kstar_formula: k / (k + 2.0 * forms.h_mean + 2.0),
    })
}

/// `max |<dφ, dφ> - (I + 2II + III)|` for one sample.
pub fn dual_metric_defect(jet: &ImmersionJet) -> Result<f64> {
    let dual = dualize(jet)?;
    Ok((&dual.istar_pullback - horospherical_metric_direct(&dual.forms))
        .abs()
        .max())
}

/// Moves every tangent horosphere of a sphere-type family a distance
/// `u(s)` along its vertical line and returns the envelope of the result.
///
/// Fails with [`GeomError::ConvexityLost`] if the shifted graph is not
/// convex at one of the check sites.
pub fn equidistant_envelope(
    family: &SurfaceFamily,
    u: &ConformalFactor,
    check_sites: &[Site],
) -> Result<SurfaceFamily> {
    if family.transform().is_some() {
        return Err(GeomError::Unsupported(
            "equidistant envelopes of moved families".into(),
        ));
    }
    let n = family.n();
    let (base, factor) = if let Some(g) = family.graph() {
        (g.base().clone(), g.factor().spec().clone())
    } else if let Some((center, radius)) = family.sphere_data() {
        (center, FactorSpec::constant(radius))
    } else {
        return Err(GeomError::Unsupported(
            "equidistant envelopes need a sphere or reconstructed family".into(),
        ));
    };
    if u.n() != n {
        return Err(GeomError::DimensionMismatch {
            expected: n,
            found: u.n(),
        });
    }
    let spec = match factor {
        FactorSpec::Constant { value } if u.as_constant().is_some() => {
            FactorSpec::constant(value + u.as_constant().unwrap_or(0.0))
        }
        other => other.plus(u.spec().clone()),
    };
    let graph = GraphSurface::new(base.clone(), ConformalFactor::new(n, spec.clone())?)?;
    for (idx, site) in check_sites.iter().enumerate() {
        let Site::Sphere { chart, y } = site else {
            return Err(GeomError::InvalidParameter("sphere sites expected".into()));
        };
        let sf = star_forms(&graph, chart, y)?;
        let kmin = sf.kstar[0];
        if !(kmin > 1e-9) {
            return Err(GeomError::ConvexityLost {
                sample: idx,
                min_eigenvalue: kmin,
            });
        }
    }
    Ok(build_surface(
        n,
        &FamilySpec::Reconstructed {
            base: Some(base.vec().to_vec()),
            factor: spec,
        },
    )?
    .with_fd(family.fd()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypersurface::{classify_convexity, Convexity};
    use crate::sphere::low_discrepancy;

    fn sphere(n: usize, t: f64) -> SurfaceFamily {
        build_surface(n, &FamilySpec::GeodesicSphere { center: None, radius: t }).unwrap()
    }

    #[test]
    fn sphere_duals_are_scaled_round_spheres() {
        let t = 1.0f64;
        let fam = sphere(3, t);
        for site in fam.sites(40).unwrap() {
            let jet = fam.jet(&site).unwrap();
            let d = dualize(&jet).unwrap();
            let v = site.direction().unwrap();
            let mut want = MVec::basis(4, 0);
            for k in 0..3 {
                want[k + 1] = v[k];
            }
            assert!((d.phi.vec() - &want.scale(t.exp())).euclid_norm() < 1e-12);
            let e2t = (2.0 * t).exp();
            assert!((&d.istar_pullback - DMatrix::identity(2, 2) * e2t).abs().max() < 1e-9 * e2t);
            assert!(dual_metric_defect(&jet).unwrap() < 1e-12);
            assert!((jet.x.vec().inner(d.phi.vec()) + 1.0).abs() < 1e-12);
            let ds = de_sitter_dual(&jet).unwrap();
            assert!((&ds.metric - DMatrix::identity(2, 2) * t.cosh().powi(2)).abs().max() < 1e-12);
            assert!((&ds.metric - &ds.forms.iii).abs().max() < 1e-12);
            assert!(sample_double_dual_defect(&jet).unwrap() < 1e-12);
            let rel = relation_check(&jet).unwrap();
            assert!((rel.kstar_formula - (-2.0f64).exp()).abs() < 1e-12);
            assert!(rel.discrepancy() < 1e-12);
        }
    }

    #[test]
    fn hyperplane_and_horosphere_duals() {
        let plane = build_surface(3, &FamilySpec::TotallyGeodesicHyperplane { pole: vec![0.0, 0.0, 0.0, 1.0] }).unwrap();
        let horo = build_surface(3, &FamilySpec::Horosphere { xi: vec![1.0, 0.0, 1.0, 0.0], reversed: false }).unwrap();
        for site in plane.sites(8).unwrap() {
            let jet = plane.jet(&site).unwrap();
            let d = dualize(&jet).unwrap();
            assert!((&d.istar_pullback - &d.forms.i).abs().max() < 1e-14);
            let ds = de_sitter_dual(&jet).unwrap();
            assert!(ds.metric.abs().max() < 1e-14);
            let rel = relation_check(&jet).unwrap();
            assert!((rel.kstar_formula + 1.0).abs() < 1e-14 && (rel.kstar_analytic + 1.0).abs() < 1e-14);
            let d = dualize(&horo.jet(&site).unwrap()).unwrap();
            assert!((d.phi.vec() - &MVec::new(vec![1.0, 0.0, 1.0, 0.0])).euclid_norm() < 1e-12);
            assert!(d.dphi.iter().all(|v| v.euclid_norm() < 1e-12));
        }
    }

    #[test]
    fn inversion() {
        let b = DMatrix::identity(2, 2) / 1f64.tanh();
        let bs = weingarten_inversion(&b).unwrap();
        assert!((bs[(0, 0)] - 0.4323324).abs() < 1e-7);
        assert_eq!(weingarten_inversion(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::identity(3, 3));
        assert!(matches!(
            weingarten_inversion(&(-DMatrix::identity(2, 2))),
            Err(GeomError::DualSingular { .. })
        ));
    }

    #[test]
    fn klein_quadric_relation() {
        let q = build_surface(3, &FamilySpec::KleinQuadric { axes: vec![0.3, 0.5, 0.7] }).unwrap();
        for site in q.sites(200).unwrap() {
            let jet = q.jet(&site).unwrap();
            assert!(relation_check(&jet).unwrap().discrepancy() < 1e-9);
            assert!(dual_metric_defect(&jet).unwrap() < 1e-9);
        }
    }

    #[test]
    fn envelopes_of_graphs() {
        let fd = FdConfig::default();
        let n = 3;
        let c = 0.9f64;
        let g = GraphSurface::new(HPoint::origin(n), ConformalFactor::constant(n, c).unwrap()).unwrap();
        let v = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let chart = SphereChart::centered(&v).unwrap();
        let y = DVector::zeros(2);
        let p = envelope_point(&g, &chart, &y).unwrap();
        let want = MVec::new(vec![c.cosh(), 0.0, 0.6 * c.sinh(), 0.8 * c.sinh()]);
        assert!((p.vec() - &want).euclid_norm() < 1e-12);
        let flat = GraphSurface::new(HPoint::origin(n), ConformalFactor::constant(n, 0.0).unwrap()).unwrap();
        assert!(matches!(envelope_point(&flat, &chart, &y), Err(GeomError::DegenerateStar { .. })));

        let spec = FactorSpec::constant(1.0).plus(FactorSpec::Quadratic {
            q: vec![vec![0.05, 0.0, 0.01], vec![0.0, -0.03, 0.0], vec![0.01, 0.0, 0.02]],
        });
        let g = GraphSurface::new(HPoint::origin(n), ConformalFactor::new(n, spec).unwrap()).unwrap();
        for s in low_discrepancy(n, 20) {
            let chart = SphereChart::centered(&s).unwrap();
            assert!(double_dual_defect(&g, &chart, &y, &fd).unwrap() < 1e-8);
            let jet = envelope_jet(&g, &chart, &y, &fd).unwrap();
            let dual = dualize(&jet).unwrap();
            let sf = star_forms(&g, &chart, &y).unwrap();
            let bstar = weingarten_inversion(&dual.forms.b).unwrap();
            assert!((&bstar - &sf.bstar).abs().max() < 1e-6);
            assert!((&dual.istar_pullback - &sf.istar).abs().max() < 1e-6 * sf.istar.max());
            // I(X, Y) = I*(B* X, B* Y)
            let i_from_star = sf.bstar.transpose() * &sf.istar * &sf.bstar;
            assert!((&dual.forms.i - i_from_star).abs().max() < 1e-6);
            assert_eq!(classify_convexity(&dual.forms), Convexity::Convex);
        }
    }

    #[test]
    fn equidistant_envelope_shifts_spheres() {
        let fam = sphere(3, 0.7);
        let sites = fam.sites(30).unwrap();
        let shifted = equidistant_envelope(&fam, &ConformalFactor::constant(3, 0.4).unwrap(), &sites).unwrap();
        let (center, radius) = shifted.sphere_data().unwrap();
        assert_eq!(center, HPoint::origin(3));
        assert!((radius - 1.1).abs() < 1e-15);
        let same = equidistant_envelope(&fam, &ConformalFactor::constant(3, 0.0).unwrap(), &sites).unwrap();
        assert!((same.sphere_data().unwrap().1 - 0.7).abs() < 1e-15);
        let bad = equidistant_envelope(&fam, &ConformalFactor::constant(3, -0.7).unwrap(), &sites);
        assert!(matches!(bad, Err(GeomError::ConvexityLost { .. })));
    }
}
