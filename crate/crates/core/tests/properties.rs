use horodual::admissibility::admissibility_test;
use horodual::duality::{dualize, relation_check, weingarten_inversion};
use horodual::factor::{ConformalFactor, FactorSpec};
use horodual::hypersurface::{build_surface, forms_at, horospherical_metric_direct, FamilySpec, Site};
use horodual::isometry::{make_isometry, IsometrySpec};
use horodual::lorentz::{busemann, hdist, HPoint, Horosphere, MVec};
use horodual::sphere::low_discrepancy;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Option<DVector<f64>> {
    let d = DVector::from_vec(v);
    let n = d.norm();
    (n > 0.1).then(|| d / n)
}

fn point(r: f64, dir: &DVector<f64>) -> HPoint {
    let mut v = vec![r.cosh()];
    v.extend(dir.iter().map(|c| r.sinh() * c));
    HPoint::new(MVec::new(v)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distance_is_a_metric(
        a in prop::collection::vec(-1.0..1.0f64, 3), b in prop::collection::vec(-1.0..1.0f64, 3),
        c in prop::collection::vec(-1.0..1.0f64, 3), r in prop::array::uniform3(0.0..2.0f64),
    ) {
        let (Some(a), Some(b), Some(c)) = (unit(a), unit(b), unit(c)) else { return Ok(()) };
        let (x, y, z) = (point(r[0], &a), point(r[1], &b), point(r[2], &c));
        prop_assert!((hdist(&x, &y) - hdist(&y, &x)).abs() < 1e-12);
        prop_assert!(hdist(&x, &z) <= hdist(&x, &y) + hdist(&y, &z) + 1e-10);
        prop_assert!(hdist(&x, &x) < 1e-12);
    }

    #[test]
    fn busemann_shifts_with_the_horosphere(
        d in prop::collection::vec(-1.0..1.0f64, 3), e in prop::collection::vec(-1.0..1.0f64, 3),
        r in 0.0..2.0f64, t in -2.0..2.0f64,
    ) {
        let (Some(d), Some(e)) = (unit(d), unit(e)) else { return Ok(()) };
        let mut xi = vec![1.0];
        xi.extend(d.iter());
        let xi = Horosphere::new(MVec::new(xi)).unwrap();
        let x = point(r, &e);
        prop_assert!((busemann(&xi.shifted(t), &x) - (busemann(&xi, &x) - t)).abs() < 1e-12);
    }

    #[test]
    fn sphere_duals(t in 0.05..3.0f64, d in prop::collection::vec(-1.0..1.0f64, 4)) {
        let Some(v) = unit(d) else { return Ok(()) };
        let fam = build_surface(4, &FamilySpec::GeodesicSphere { center: None, radius: t }).unwrap();
        let dual = dualize(&fam.jet(&Site::on_sphere(&v).unwrap()).unwrap()).unwrap();
        let mut want = vec![t.exp()];
        want.extend(v.iter().map(|c| t.exp() * c));
        prop_assert!((dual.phi.vec() - &MVec::new(want)).euclid_norm() < 1e-12 * t.exp());
        let e2t = (2.0 * t).exp();
        prop_assert!((&dual.istar_pullback - DMatrix::identity(3, 3) * e2t).abs().max() < 1e-10 * e2t);
    }

    #[test]
    fn klein_quadrics_satisfy_the_dual_metric_identity(
        axes in prop::array::uniform3(0.1..0.9f64), d in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let Some(v) = unit(d) else { return Ok(()) };
        let fam = build_surface(3, &FamilySpec::KleinQuadric { axes: axes.to_vec() }).unwrap();
        let jet = fam.jet(&Site::on_sphere(&v).unwrap()).unwrap();
        let dual = dualize(&jet).unwrap();
        let direct = horospherical_metric_direct(&dual.forms);
        prop_assert!((&dual.istar_pullback - &direct).abs().max() < 1e-9 * direct.abs().max().max(1.0));
        prop_assert!((jet.x.vec().inner(dual.phi.vec()) + 1.0).abs() < 1e-12);
        prop_assert!(relation_check(&jet).unwrap().discrepancy() < 1e-9);
    }

    #[test]
    fn inversion_is_a_left_inverse(
        diag in prop::array::uniform3(-0.9..5.0f64), p in prop::array::uniform9(-1.0..1.0f64),
    ) {
        let p = DMatrix::from_row_slice(3, 3, &p) + DMatrix::identity(3, 3) * 2.0;
        let Some(pinv) = p.clone().try_inverse() else { return Ok(()) };
        let b = &p * DMatrix::from_diagonal(&DVector::from_row_slice(&diag)) * pinv;
        let bs = weingarten_inversion(&b).unwrap();
        let e = DMatrix::identity(3, 3);
        prop_assert!((bs * (&e + &b) - e).abs().max() < 1e-7);
    }

    #[test]
    fn isometries_preserve_the_dual_metric(
        len in 0.1..1.5f64, d in prop::collection::vec(-1.0..1.0f64, 3), r in 0.1..1.5f64,
    ) {
        let Some(dir) = unit(d) else { return Ok(()) };
        let mut w = vec![0.0];
        w.extend(dir.iter());
        let g = make_isometry(&IsometrySpec::Translation { point: HPoint::origin(3), direction: MVec::new(w), length: len }).unwrap();
        let fam = build_surface(3, &FamilySpec::GeodesicSphere { center: None, radius: r }).unwrap();
        let moved = fam.transformed(&g);
        for site in fam.sites(10).unwrap() {
            let a = dualize(&fam.jet(&site).unwrap()).unwrap();
            let b = dualize(&moved.jet(&site).unwrap()).unwrap();
            prop_assert!((&a.istar_pullback - &b.istar_pullback).abs().max() < 1e-10 * a.istar_pullback.abs().max());
            let ga = g.apply(a.phi.vec());
            prop_assert!((b.phi.vec() - &ga).euclid_norm() < 1e-10 * ga.euclid_norm());
            let fb = forms_at(&moved.jet(&site).unwrap()).unwrap();
            prop_assert!((&fb.b - &a.forms.b).abs().max() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn admissibility_class_is_rotation_invariant(
        th in 0.0..6.28f64, c in 0.3..2.0f64, a in prop::array::uniform3(-0.1..0.1f64),
    ) {
        let base = FactorSpec::constant(c).plus(FactorSpec::Linear { a: a.to_vec() });
        let mut m = vec![vec![0.0; 4]; 4];
        m[0][0] = 1.0;
        m[3][3] = 1.0;
        m[1][1] = th.cos();
        m[2][2] = th.cos();
        m[1][2] = -th.sin();
        m[2][1] = th.sin();
        let rotated = FactorSpec::Transformed { inner: Box::new(base.clone()), matrix: m };
        let grid = low_discrepancy(3, 150);
        let r0 = admissibility_test(&ConformalFactor::new(3, base).unwrap(), &grid).unwrap();
        let r1 = admissibility_test(&ConformalFactor::new(3, rotated).unwrap(), &grid).unwrap();
        prop_assert_eq!(r0.class, r1.class);
        prop_assert!((r0.min_kstar - r1.min_kstar).abs() < 0.05);
    }
}
