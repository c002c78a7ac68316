//! The isometry group O^+(n, 1) of H^n acting linearly on Minkowski space,
//! and hence on points, horospheres and vertical lines alike.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::lorentz::{
    form_matrix, orthonormalize_spacelike, DeSitterPoint, HPoint, Horosphere, IdealPoint, MVec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometryKind {
    Rotation,
    Translation,
    Parabolic,
    Extension,
    Composite,
}

/// Orientation flag for extending a hyperplane isometry to H^n.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "+")]
    Preserving,
    #[serde(rename = "-")]
    Reversing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Isometry {
    matrix: DMatrix<f64>,
    kind: IsometryKind,
}

/// Constructor data for [`make_isometry`].
#[derive(Clone, Debug)]
pub enum IsometrySpec {
    /// Rotation by `angle` about `center` in the 2-plane spanned by two
    /// tangent vectors at `center` (they are orthonormalized first).
    Rotation {
        center: HPoint,
        plane: (MVec, MVec),
        angle: f64,
    },
    /// Translation by `length` along the geodesic through `point` with
    /// tangent `direction`.
    Translation {
        point: HPoint,
        direction: MVec,
        length: f64,
    },
    /// Translation by `length` along the axis from `from` toward `to`.
    TranslationAxis {
        from: HPoint,
        to: HPoint,
        length: f64,
    },
    /// Parabolic element `exp(A)` with `A y = <xi, y> v - <v, y> xi`; the
    /// shear `v` must be tangent to the null cone at `xi`.
    Parabolic { fixed: Horosphere, shear: MVec },
    /// Extension of an isometry of the totally geodesic hyperplane with pole
    /// `pole`. `map` acts on the hyperplane in the Lorentz frame returned by
    /// [`hyperplane_frame`].
    ExtendFromHyperplane {
        pole: DeSitterPoint,
        map: DMatrix<f64>,
        orientation: Orientation,
    },
}

fn lorentz_defect(m: &DMatrix<f64>) -> f64 {
    let eta = form_matrix(m.nrows());
    let d = m.transpose() * &eta * m - &eta;
    let scale = m.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    d.abs().max() / (scale * scale)
}

impl Isometry {
    /// Validates `M^T η M = η` (relative to the entry scale) and `M00 > 0`.
    pub fn new(matrix: DMatrix<f64>, kind: IsometryKind) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() < 3 {
            return Err(GeomError::InvalidParameter(
                "isometry matrix must be square of size >= 3".into(),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("isometry matrix"));
        }
        let defect = lorentz_defect(&matrix);
        if defect > 1e-10 {
            return Err(GeomError::InvalidParameter(format!(
                "matrix does not preserve the form (defect {defect:e})"
            )));
        }
        if matrix[(0, 0)] <= 0.0 {
            return Err(GeomError::InvalidParameter(
                "matrix reverses time orientation".into(),
            ));
        }
        Ok(Isometry { matrix, kind })
    }

    pub fn identity(n: usize) -> Self {
        Isometry {
            matrix: DMatrix::identity(n + 1, n + 1),
            kind: IsometryKind::Composite,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> IsometryKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn apply(&self, v: &MVec) -> MVec {
        v.transform(&self.matrix)
    }

    pub fn apply_point(&self, x: &HPoint) -> HPoint {
        HPoint::new_unchecked(self.apply(x.vec()))
    }

    pub fn apply_horosphere(&self, xi: &Horosphere) -> Horosphere {
        Horosphere::new_unchecked(self.apply(xi.vec()))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        Isometry {
            matrix: &self.matrix * &other.matrix,
            kind: IsometryKind::Composite,
        }
    }

    /// `η M^T η`.
    pub fn inverse(&self) -> Isometry {
        let eta = form_matrix(self.matrix.nrows());
        Isometry {
            matrix: &eta * self.matrix.transpose() * &eta,
            kind: self.kind,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    /// Maximum of `|M^T η M - η|` relative to the entry scale.
    pub fn defect(&self) -> f64 {
        lorentz_defect(&self.matrix)
    }
}

fn outer(a: &MVec, b: &MVec) -> DMatrix<f64> {
    // a ⊗ <b, .>
    let mut bf = b.0.clone();
    bf[0] = -bf[0];
    &a.0 * bf.transpose()
}

fn check_tangent(x: &HPoint, v: &MVec) -> Result<()> {
    if v.len() != x.vec().len() {
        return Err(GeomError::DimensionMismatch {
            expected: x.vec().len(),
            found: v.len(),
        });
    }
    Ok(())
}

fn project_tangent(x: &HPoint, v: &MVec) -> MVec {
    // v + <v, x> x
    v.axpy(v.inner(x.vec()), x.vec())
}

/// A Lorentz-orthonormal frame `f_0` (timelike), `f_1..f_{n-1}` of the
/// hyperplane `pole^⊥`.
pub fn hyperplane_frame(pole: &DeSitterPoint) -> Result<Vec<MVec>> {
    let w = pole.vec();
    let len = w.len();
    let e0 = MVec::basis(len, 0);
    let f0 = e0.axpy(-e0.inner(w), w);
    let f0 = f0.scale(1.0 / (-f0.norm_sq()).sqrt());
    let skip = (1..len)
        .max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()))
        .unwrap_or(1);
    let mut vs = Vec::with_capacity(len - 2);
    for k in (1..len).filter(|&k| k != skip) {
        let e = MVec::basis(len, k);
        let e = e.axpy(-e.inner(w), w);
        vs.push(e.axpy(e.inner(&f0), &f0));
    }
    let mut frame = vec![f0];
    frame.extend(orthonormalize_spacelike(&vs)?);
    Ok(frame)
}

pub fn make_isometry(spec: &IsometrySpec) -> Result<Isometry> {
    match spec {
        IsometrySpec::Rotation {
            center,
            plane,
            angle,
        } => {
            check_tangent(center, &plane.0)?;
            check_tangent(center, &plane.1)?;
            let uv = orthonormalize_spacelike(&[
                project_tangent(center, &plane.0),
                project_tangent(center, &plane.1),
            ])
            .map_err(|_| GeomError::InvalidParameter("rotation plane is degenerate".into()))?;
            let (u, v) = (&uv[0], &uv[1]);
            let len = u.len();
            let m = DMatrix::identity(len, len)
                + (outer(u, u) + outer(v, v)) * (angle.cos() - 1.0)
                + (outer(v, u) - outer(u, v)) * angle.sin();
            Isometry::new(m, IsometryKind::Rotation)
        }
        IsometrySpec::Translation {
            point,
            direction,
            length,
        } => {
            check_tangent(point, direction)?;
            let w = orthonormalize_spacelike(&[project_tangent(point, direction)])
                .map_err(|_| GeomError::InvalidParameter("zero translation direction".into()))?
                .remove(0);
            let x = point.vec();
            let len = x.len();
            let m = DMatrix::identity(len, len)
                + (outer(&w, &w) - outer(x, x)) * (length.cosh() - 1.0)
                + (outer(x, &w) - outer(&w, x)) * length.sinh();
            Isometry::new(m, IsometryKind::Translation)
        }
        IsometrySpec::TranslationAxis { from, to, length } => {
            let dir = project_tangent(from, to.vec());
            if !(dir.norm_sq() > 1e-24) {
                return Err(GeomError::InvalidParameter(
                    "axis endpoints coincide".into(),
                ));
            }
            make_isometry(&IsometrySpec::Translation {
                point: from.clone(),
                direction: dir,
                length: *length,
            })
        }
        IsometrySpec::Parabolic { fixed, shear } => {
            let xi = fixed.vec();
            if shear.len() != xi.len() {
                return Err(GeomError::DimensionMismatch {
                    expected: xi.len(),
                    found: shear.len(),
                });
            }
            let scale = xi.euclid_norm() * shear.euclid_norm();
            let residual = shear.inner(xi).abs() / scale.max(1e-300);
            if residual > 1e-8 {
                return Err(GeomError::NotTangent { residual });
            }
            if !(shear.norm_sq() > 1e-20 * shear.euclid_norm().powi(2).max(1e-300)) {
                return Err(GeomError::InvalidParameter(
                    "parabolic shear is zero modulo the fixed ray".into(),
                ));
            }
            let a = outer(shear, xi) - outer(xi, shear);
            let len = xi.len();
            let m = DMatrix::identity(len, len) + &a + &a * &a * 0.5;
            Isometry::new(m, IsometryKind::Parabolic)
        }
        IsometrySpec::ExtendFromHyperplane {
            pole,
            map,
            orientation,
        } => {
            let w = pole.vec();
            let len = w.len();
            if map.nrows() != len - 1 || map.ncols() != len - 1 {
                return Err(GeomError::DimensionMismatch {
                    expected: len - 1,
                    found: map.nrows(),
                });
            }
            if lorentz_defect(map) > 1e-10 || map[(0, 0)] <= 0.0 {
                return Err(GeomError::InvalidParameter(
                    "hyperplane map is not an isometry of H^{n-1}".into(),
                ));
            }
            let frame = hyperplane_frame(pole)?;
            let f = DMatrix::from_fn(len, len - 1, |r, c| frame[c][r]);
            let eta_small = form_matrix(len - 1);
            let eta = form_matrix(len);
            let sign_a = map.determinant().signum();
            let eps = match orientation {
                Orientation::Preserving => sign_a,
                Orientation::Reversing => -sign_a,
            };
            let m = &f * map * &eta_small * f.transpose() * &eta + outer(w, w) * eps;
            Isometry::new(m, IsometryKind::Extension)
        }
    }
}

/// A vertical line (pencil of horospheres with one ideal point) preserved
/// by an isometry, which scales its null vectors by `eigenvalue`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantLine {
    pub ideal: IdealPoint,
    pub eigenvalue: f64,
    /// Eigenvalue 1: every horosphere on the line is fixed.
    pub fixed_pointwise: bool,
}

/// Invariant vertical lines of an isometry.
///
/// When an eigenspace is Lorentzian of dimension `k >= 3` its null rays
/// form a whole `(k-2)`-sphere of invariant lines; these are summarized in
/// `continua` as `(eigenvalue, sphere dimension)` instead of being listed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NullSpectrum {
    pub lines: Vec<InvariantLine>,
    pub continua: Vec<(f64, usize)>,
}

impl NullSpectrum {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty() && self.continua.is_empty()
    }

    /// Number of isolated lines whose horospheres are all fixed.
    pub fn fixed_lines(&self) -> usize {
        self.lines.iter().filter(|l| l.fixed_pointwise).count()
    }

    /// True when some horosphere is fixed.
    pub fn has_fixed_horosphere(&self) -> bool {
        self.fixed_lines() > 0 || self.continua.iter().any(|c| (c.0 - 1.0).abs() < 1e-9)
    }
}

fn future(v: MVec) -> MVec {
    if v[0] < 0.0 {
        -v
    } else {
        v
    }
}

pub fn invariant_null_spectrum(g: &Isometry) -> NullSpectrum {
    let m = g.matrix();
    let len = m.nrows();
    let scale = m.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    // Jordan blocks perturb eigenvalues by ~eps^(1/3), hence the loose
    // clustering; candidates are confirmed by an SVD kernel below.
    let loose = 1e-4 * scale;
    let mut candidates: Vec<f64> = Vec::new();
    for c in m.complex_eigenvalues().iter() {
        if c.im.abs() > loose || c.re <= 0.0 {
            continue;
        }
        let mut lam = c.re;
        if (lam - 1.0).abs() < loose {
            lam = 1.0;
        }
        if !candidates.iter().any(|&l| (l - lam).abs() < loose) {
            candidates.push(lam);
        }
    }
    candidates.sort_by(f64::total_cmp);

    let eta = form_matrix(len);
    let mut out = NullSpectrum::default();
    for lam in candidates {
        let shifted = m - DMatrix::identity(len, len) * lam;
        let svd = shifted.svd(false, true);
        let vt = match svd.v_t {
            Some(v) => v,
            None => continue,
        };
        let kernel: Vec<MVec> = (0..len)
            .filter(|&i| svd.singular_values[i] < 1e-7 * scale)
            .map(|i| MVec(vt.row(i).transpose()))
            .collect();
        if kernel.is_empty() {
            continue;
        }
        let k = kernel.len();
        let kmat = DMatrix::from_fn(len, k, |r, c| kernel[c][r]);
        let gram = kmat.transpose() * &eta * &kmat;
        let eig = SymmetricEigen::new(gram.clone());
        let tol = 1e-9;
        let neg: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] < -tol).collect();
        let zero: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i].abs() <= tol).collect();
        let fixed_pointwise = (lam - 1.0).abs() < 1e-9;
        let mut push = |v: MVec| {
            if let Ok(ideal) = IdealPoint::from_null(&future(v)) {
                out.lines.push(InvariantLine {
                    ideal,
                    eigenvalue: lam,
                    fixed_pointwise,
                });
            }
        };
        match (neg.len(), zero.len()) {
            (0, 1) => {
                let c = eig.eigenvectors.column(zero[0]).into_owned();
                push(MVec(&kmat * c));
            }
            (1, _) if k == 2 => {
                let pos = (0..k).find(|&i| eig.eigenvalues[i] > tol);
                if let Some(p) = pos {
                    let a = eig.eigenvectors.column(neg[0]) / (-eig.eigenvalues[neg[0]]).sqrt();
                    let b = eig.eigenvectors.column(p) / eig.eigenvalues[p].sqrt();
                    push(MVec(&kmat * (&a + &b)));
                    push(MVec(&kmat * (&a - &b)));
                }
            }
            (1, _) if k >= 3 => out.continua.push((lam, k - 2)),
            _ => {}
        }
    }
    out
}
