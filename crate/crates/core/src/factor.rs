//! Conformal factors `u` on the unit sphere S^{n-1} ⊂ R^n.
//!
//! A factor is given by a smooth extension to an open subset of R^n; its
//! 2-jet on the sphere is obtained by pulling the ambient jet back through a
//! sphere chart.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::lorentz::form_matrix;
use crate::sphere::{Jet2, SphereChart};

/// Builder description of a factor, as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FactorSpec {
    Constant {
        value: f64,
    },
    /// `<a, s>`
    Linear {
        a: Vec<f64>,
    },
    /// `<Q s, s>` with `Q` symmetrized; rows of `Q`.
    Quadratic {
        q: Vec<Vec<f64>>,
    },
    /// Legendre series `sum c_k P_k(<axis, s>)`; zonal spherical harmonics
    /// when n = 3.
    Harmonic {
        axis: Vec<f64>,
        coeffs: Vec<f64>,
    },
    Sum {
        terms: Vec<FactorSpec>,
    },
    /// The factor of the graph moved by a hyperbolic isometry `g`, written
    /// in the orthonormal frame `(x0, f_1..f_n)` of the base point:
    /// `u'(s) = u(σ(s)) - log w_0(s)` with `w = g^{-1}(1, s)` and
    /// `σ = w_spatial / w_0`.
    Transformed {
        inner: Box<FactorSpec>,
        matrix: Vec<Vec<f64>>,
    },
}

impl FactorSpec {
    pub fn constant(value: f64) -> Self {
        FactorSpec::Constant { value }
    }

    pub fn plus(self, other: FactorSpec) -> Self {
        FactorSpec::Sum {
            terms: vec![self, other],
        }
    }
}

#[derive(Clone, Debug)]
enum Prepared {
    Constant(f64),
    Linear(DVector<f64>),
    Quadratic(DMatrix<f64>),
    Harmonic(DVector<f64>, Vec<f64>),
    Sum(Vec<Prepared>),
    Transformed(Box<Prepared>, DMatrix<f64>),
}

/// A smooth conformal factor on S^{n-1}, `h = e^{2u} can`.
#[derive(Clone, Debug)]
pub struct ConformalFactor {
    n: usize,
    spec: FactorSpec,
    prepared: Prepared,
}

fn vec_of(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(GeomError::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GeomError::InvalidParameter(format!("non-finite {what}")));
    }
    Ok(DVector::from_column_slice(v))
}

fn mat_of(rows: &[Vec<f64>], size: usize) -> Result<DMatrix<f64>> {
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(GeomError::DimensionMismatch {
            expected: size,
            found: rows.len(),
        });
    }
    let m = DMatrix::from_fn(size, size, |i, j| rows[i][j]);
    if m.iter().any(|x| !x.is_finite()) {
        return Err(GeomError::InvalidParameter("non-finite matrix entry".into()));
    }
    Ok(m)
}

fn prepare(spec: &FactorSpec, n: usize) -> Result<Prepared> {
    Ok(match spec {
        FactorSpec::Constant { value } => {
            if !value.is_finite() {
                return Err(GeomError::InvalidParameter("non-finite constant".into()));
            }
            Prepared::Constant(*value)
        }
        FactorSpec::Linear { a } => Prepared::Linear(vec_of(a, n, "coefficient")?),
        FactorSpec::Quadratic { q } => {
            let m = mat_of(q, n)?;
            Prepared::Quadratic((&m + m.transpose()) * 0.5)
        }
        FactorSpec::Harmonic { axis, coeffs } => {
            let a = vec_of(axis, n, "axis")?;
            let na = a.norm();
            if !(na > 0.0) {
                return Err(GeomError::InvalidParameter("zero harmonic axis".into()));
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(GeomError::InvalidParameter("non-finite coefficient".into()));
            }
            Prepared::Harmonic(a / na, coeffs.clone())
        }
        FactorSpec::Sum { terms } => Prepared::Sum(
            terms
                .iter()
                .map(|t| prepare(t, n))
                .collect::<Result<Vec<_>>>()?,
        ),
        FactorSpec::Transformed { inner, matrix } => {
            let g = mat_of(matrix, n + 1)?;
            let eta = form_matrix(n + 1);
            let defect = (g.transpose() * &eta * &g - &eta).abs().max();
            if defect > 1e-9 || g[(0, 0)] <= 0.0 {
                return Err(GeomError::InvalidParameter(
                    "transform is not an orientation-compatible Lorentz matrix".into(),
                ));
            }
            let ginv = &eta * g.transpose() * &eta;
            Prepared::Transformed(Box::new(prepare(inner, n)?), ginv)
        }
    })
}

/// Legendre values and first two derivatives at `z`.
fn legendre(coeffs: &[f64], z: f64) -> (f64, f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    let (mut d0, mut d1) = (0.0, 1.0);
    let (mut s0, mut s1) = (0.0, 0.0);
    let mut acc = (0.0, 0.0, 0.0);
    for (k, &c) in coeffs.iter().enumerate() {
        let (p, d, s) = if k == 0 { (p0, d0, s0) } else { (p1, d1, s1) };
        acc.0 += c * p;
        acc.1 += c * d;
        acc.2 += c * s;
        if k >= 1 {
            let kf = k as f64;
            let p2 = ((2.0 * kf + 1.0) * z * p1 - kf * p0) / (kf + 1.0);
            let d2 = d0 + (2.0 * kf + 1.0) * p1;
            let s2 = s0 + (2.0 * kf + 1.0) * d1;
            p0 = p1;
            p1 = p2;
            d0 = d1;
            d1 = d2;
            s0 = s1;
            s1 = s2;
        }
    }
    acc
}

fn ambient(p: &Prepared, s: &DVector<f64>) -> Jet2 {
    let n = s.len();
    match p {
        Prepared::Constant(c) => Jet2::constant(*c, n),
        Prepared::Linear(a) => Jet2 {
            value: a.dot(s),
            grad: a.clone(),
            hess: DMatrix::zeros(n, n),
        },
        Prepared::Quadratic(q) => {
            let qs = q * s;
            Jet2 {
                value: s.dot(&qs),
                grad: qs * 2.0,
                hess: q * 2.0,
            }
        }
        Prepared::Harmonic(axis, coeffs) => {
            let (v, d, dd) = legendre(coeffs, axis.dot(s));
            Jet2 {
                value: v,
                grad: axis * d,
                hess: axis * axis.transpose() * dd,
            }
        }
        Prepared::Sum(terms) => terms
            .iter()
            .fold(Jet2::constant(0.0, n), |acc, t| acc.add(&ambient(t, s))),
        Prepared::Transformed(inner, ginv) => {
            let mut v = DVector::zeros(n + 1);
            v[0] = 1.0;
            v.rows_mut(1, n).copy_from(s);
            let w = ginv * v;
            let w0 = w[0];
            let g0 = DVector::from_fn(n, |j, _| ginv[(0, j + 1)]);
            let sigma = DVector::from_fn(n, |k, _| w[k + 1] / w0);
            // dσ_k/ds_j
            let jac = DMatrix::from_fn(n, n, |k, j| {
                ginv[(k + 1, j + 1)] / w0 - w[k + 1] * g0[j] / (w0 * w0)
            });
            let base = ambient(inner, &sigma);
            let mut hess = jac.transpose() * &base.hess * &jac;
            for k in 0..n {
                let gk = base.grad[k];
                if gk == 0.0 {
                    continue;
                }
                for i in 0..n {
                    for j in 0..n {
                        let d2 = -ginv[(k + 1, j + 1)] * g0[i] / (w0 * w0)
                            - ginv[(k + 1, i + 1)] * g0[j] / (w0 * w0)
                            + 2.0 * w[k + 1] * g0[i] * g0[j] / (w0 * w0 * w0);
                        hess[(i, j)] += gk * d2;
                    }
                }
            }
            hess += &g0 * g0.transpose() / (w0 * w0);
            Jet2 {
                value: base.value - w0.ln(),
                grad: jac.transpose() * &base.grad - &g0 / w0,
                hess,
            }
        }
    }
}

impl ConformalFactor {
    /// `n` is the ambient dimension of R^n (so the factor lives on S^{n-1}).
    pub fn new(n: usize, spec: FactorSpec) -> Result<Self> {
        if n < 3 {
            return Err(GeomError::InvalidParameter(format!(
                "factors need n >= 3, got {n}"
            )));
        }
        let prepared = prepare(&spec, n)?;
        Ok(ConformalFactor { n, spec, prepared })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(n, FactorSpec::Constant { value })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    /// `Some(c)` when the factor is syntactically constant.
    pub fn as_constant(&self) -> Option<f64> {
        fn walk(p: &Prepared) -> Option<f64> {
            match p {
                Prepared::Constant(c) => Some(*c),
                Prepared::Sum(ts) => ts.iter().try_fold(0.0, |a, t| walk(t).map(|v| a + v)),
                Prepared::Harmonic(_, cs) if cs.iter().skip(1).all(|&c| c == 0.0) => {
                    Some(cs.first().copied().unwrap_or(0.0))
                }
                Prepared::Linear(a) if a.iter().all(|&c| c == 0.0) => Some(0.0),
                Prepared::Quadratic(q) if q.iter().all(|&c| c == 0.0) => Some(0.0),
                _ => None,
            }
        }
        walk(&self.prepared)
    }

    /// Jet of the ambient extension at a point of R^n.
    pub fn ambient_jet(&self, s: &DVector<f64>) -> Jet2 {
        ambient(&self.prepared, s)
    }

    pub fn value(&self, s: &DVector<f64>) -> f64 {
        self.ambient_jet(s).value
    }

    /// 2-jet of `u ∘ σ` at chart coordinates `y`.
    pub fn chart_jet(&self, chart: &SphereChart, y: &DVector<f64>) -> Result<Jet2> {
        let sj = chart.eval(y);
        let jet = self.ambient_jet(&sj.point).pullback(&sj);
        if !jet.value.is_finite()
            || jet.grad.iter().any(|v| !v.is_finite())
            || jet.hess.iter().any(|v| !v.is_finite())
        {
            return Err(GeomError::NonFinite("conformal factor jet"));
        }
        Ok(jet)
    }

    /// Tangential gradient and Hessian (w.r.t. the round metric) at the
    /// unit vector `s`, in the frame of the chart centered at `s`.
    pub fn jet_at(&self, s: &DVector<f64>) -> Result<(SphereChart, Jet2)> {
        let chart = SphereChart::centered(s)?;
        let jet = self.chart_jet(&chart, &DVector::zeros(self.n - 1))?;
        Ok((chart, jet))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{richardson_first, richardson_second};

    fn fd_check(f: &ConformalFactor, s: &DVector<f64>) {
        let jet = f.ambient_jet(s);
        let val = |z: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![f.value(z)]))
        };
        for i in 0..s.len() {
            let d = richardson_first(&val, s, i, 1e-3).unwrap()[0];
            assert!((d - jet.grad[i]).abs() < 1e-9, "grad {i}: {d} vs {}", jet.grad[i]);
            for j in 0..s.len() {
                let dd = richardson_second(&val, s, i, j, 1e-3).unwrap()[0];
                assert!((dd - jet.hess[(i, j)]).abs() < 1e-7, "hess {i}{j}");
            }
        }
    }

    #[test]
    fn ambient_jets_match_finite_differences() {
        let s = DVector::from_vec(vec![0.3, -0.5, 0.81]);
        let specs = vec![
            FactorSpec::Linear { a: vec![0.1, 0.2, -0.3] },
            FactorSpec::Quadratic {
                q: vec![vec![1.0, 0.2, 0.0], vec![0.0, -0.5, 0.1], vec![0.3, 0.0, 0.4]],
            },
            FactorSpec::Harmonic {
                axis: vec![0.0, 1.0, 1.0],
                coeffs: vec![0.5, 0.1, -0.2, 0.05],
            },
        ];
        for spec in specs {
            fd_check(&ConformalFactor::new(3, spec).unwrap(), &s);
        }
        let c = 0.4f64;
        let boost = vec![
            vec![c.cosh(), c.sinh(), 0.0, 0.0],
            vec![c.sinh(), c.cosh(), 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let t = FactorSpec::Transformed {
            inner: Box::new(FactorSpec::Quadratic {
                q: vec![vec![0.2, 0.0, 0.1], vec![0.0, 0.1, 0.0], vec![0.1, 0.0, -0.1]],
            }),
            matrix: boost,
        };
        fd_check(&ConformalFactor::new(3, t).unwrap(), &s);
    }

    #[test]
    fn legendre_values() {
        let (v, d, dd) = legendre(&[0.0, 0.0, 1.0], 0.3);
        assert!((v - 0.5 * (3.0 * 0.09 - 1.0)).abs() < 1e-15);
        assert!((d - 0.9).abs() < 1e-15);
        assert!((dd - 3.0).abs() < 1e-15);
    }

    #[test]
    fn transformed_constant_is_an_offcenter_sphere_factor() {
        // the graph of c moved by a boost along e1 by ℓ:
        // u'(s) = c - log(cosh ℓ - sinh ℓ s_1)
        let (c, l) = (0.8f64, 0.3f64);
        let g = vec![
            vec![l.cosh(), l.sinh(), 0.0, 0.0],
            vec![l.sinh(), l.cosh(), 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let f = ConformalFactor::new(
            3,
            FactorSpec::Transformed {
                inner: Box::new(FactorSpec::constant(c)),
                matrix: g,
            },
        )
        .unwrap();
        let s = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let want = c - (l.cosh() - l.sinh() * 0.6).ln();
        assert!((f.value(&s) - want).abs() < 1e-14);
    }

    #[test]
    fn constant_detection_and_validation() {
        let f = ConformalFactor::new(
            4,
            FactorSpec::constant(1.0).plus(FactorSpec::constant(0.5)),
        )
        .unwrap();
        assert_eq!(f.as_constant(), Some(1.5));
        assert!(ConformalFactor::new(3, FactorSpec::Linear { a: vec![1.0] }).is_err());
        assert!(ConformalFactor::new(2, FactorSpec::constant(0.0)).is_err());
    }
}
