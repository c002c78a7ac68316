//! Charts and sample grids on the unit sphere S^{n-1} ⊂ R^n.
//!
//! Every sample uses a stereographic chart centered at the sample itself
//! (projection from the antipode, scaled so the chart is orthonormal at the
//! center). Functions on the sphere are handled through smooth ambient
//! extensions whose 2-jets are pulled back by the chain rule.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GeomError, Result};

/// Stereographic chart centered at a unit vector `center`:
/// `σ(y) = ((1 - |y|²/4) c + Σ yᵢ fᵢ) / (1 + |y|²/4)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereChart {
    center: DVector<f64>,
    frame: Vec<DVector<f64>>,
}

/// Value and first two chart derivatives of the chart map.
#[derive(Clone, Debug)]
pub struct SphereJet {
    pub point: DVector<f64>,
    pub d: Vec<DVector<f64>>,
    pub dd: Vec<Vec<DVector<f64>>>,
}

/// Value, gradient and Hessian of a function on an open subset of R^k.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet2 {
    pub fn constant(value: f64, dim: usize) -> Self {
        Jet2 {
            value,
            grad: DVector::zeros(dim),
            hess: DMatrix::zeros(dim, dim),
        }
    }

    /// Pulls an ambient 2-jet back through the chart map.
    pub fn pullback(&self, sj: &SphereJet) -> Jet2 {
        let m = sj.d.len();
        let grad = DVector::from_fn(m, |i, _| self.grad.dot(&sj.d[i]));
        let hess = DMatrix::from_fn(m, m, |i, j| {
            sj.d[i].dot(&(&self.hess * &sj.d[j])) + self.grad.dot(&sj.dd[i][j])
        });
        Jet2 {
            value: self.value,
            grad,
            hess,
        }
    }

    pub fn add(&self, other: &Jet2) -> Jet2 {
        Jet2 {
            value: self.value + other.value,
            grad: &self.grad + &other.grad,
            hess: &self.hess + &other.hess,
        }
    }
}

impl SphereChart {
    /// Chart centered at `center` (normalized), with a deterministic frame.
    pub fn centered(center: &DVector<f64>) -> Result<Self> {
        let len = center.len();
        if len < 2 {
            return Err(GeomError::InvalidParameter(
                "sphere charts need ambient dimension >= 2".into(),
            ));
        }
        let norm = center.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(GeomError::InvalidParameter("zero chart center".into()));
        }
        let c = center / norm;
        // skip the basis vector most aligned with c
        let skip = (0..len)
            .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()))
            .unwrap_or(0);
        let mut frame: Vec<DVector<f64>> = Vec::with_capacity(len - 1);
        for k in (0..len).filter(|&k| k != skip) {
            let mut v = DVector::zeros(len);
            v[k] = 1.0;
            v -= &c * c.dot(&v);
            for f in &frame {
                let p = f.dot(&v);
                v -= f * p;
            }
            let nv = v.norm();
            frame.push(v / nv);
        }
        Ok(SphereChart { center: c, frame })
    }

    /// Chart with an explicitly given orthonormal frame of `center^⊥`.
    pub fn with_frame(center: DVector<f64>, frame: Vec<DVector<f64>>) -> Result<Self> {
        if frame.len() + 1 != center.len() {
            return Err(GeomError::DimensionMismatch {
                expected: center.len() - 1,
                found: frame.len(),
            });
        }
        Ok(SphereChart { center, frame })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn frame(&self) -> &[DVector<f64>] {
        &self.frame
    }

    /// Intrinsic dimension n - 1.
    pub fn dim(&self) -> usize {
        self.frame.len()
    }

    pub fn eval(&self, y: &DVector<f64>) -> SphereJet {
        let m = self.dim();
        let q = y.norm_squared();
        let dd_ = 1.0 + 0.25 * q;
        let rho = 1.0 / dd_;
        // σ = -c + ρ v, v = 2c + F y
        let mut v = &self.center * 2.0;
        for i in 0..m {
            v += &self.frame[i] * y[i];
        }
        let point = &v * rho - &self.center;
        let drho: Vec<f64> = (0..m).map(|i| -0.5 * y[i] * rho * rho).collect();
        let d: Vec<DVector<f64>> = (0..m)
            .map(|i| &v * drho[i] + &self.frame[i] * rho)
            .collect();
        let dd: Vec<Vec<DVector<f64>>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        let ddrho = -0.5 * delta * rho * rho + 0.5 * y[i] * y[j] * rho * rho * rho;
                        &v * ddrho + &self.frame[j] * drho[i] + &self.frame[i] * drho[j]
                    })
                    .collect()
            })
            .collect();
        SphereJet { point, d, dd }
    }

    /// Chart coordinates of a unit vector (not the antipode of the center).
    pub fn inverse(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let denom = 1.0 + self.center.dot(s);
        if !(denom > 1e-12) {
            return Err(GeomError::InvalidParameter(
                "point is the antipode of the chart center".into(),
            ));
        }
        Ok(DVector::from_fn(self.dim(), |i, _| 2.0 * self.frame[i].dot(s) / denom))
    }

    /// Round metric components at `y`.
    pub fn round_metric(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let f = 1.0 / (1.0 + 0.25 * y.norm_squared()).powi(2);
        DMatrix::identity(self.dim(), self.dim()) * f
    }
}

/// Low-discrepancy directions: a Fibonacci lattice on S^2, Halton points
/// pushed through Box–Muller otherwise.
pub fn low_discrepancy(n: usize, count: usize) -> Vec<DVector<f64>> {
    if n == 3 {
        fibonacci_sphere(count)
    } else {
        halton_sphere(n, count)
    }
}

pub fn fibonacci_sphere(count: usize) -> Vec<DVector<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
        })
        .collect()
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points in the cube `[-radius, radius]^dim` (dim <= 8).
pub fn halton_cube(dim: usize, count: usize, radius: f64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|k| {
            DVector::from_fn(dim, |i, _| {
                radius * (2.0 * radical_inverse(k as u64 + 1, PRIMES[i]) - 1.0)
            })
        })
        .collect()
}

pub fn halton_sphere(n: usize, count: usize) -> Vec<DVector<f64>> {
    let pairs = n.div_ceil(2);
    (0..count)
        .map(|k| {
            let idx = k as u64 + 1;
            let mut z = Vec::with_capacity(2 * pairs);
            for p in 0..pairs {
                let u1 = radical_inverse(idx, PRIMES[2 * p]).max(1e-300);
                let u2 = radical_inverse(idx, PRIMES[2 * p + 1]);
                let r = (-2.0 * u1.ln()).sqrt();
                z.push(r * (2.0 * PI * u2).cos());
                z.push(r * (2.0 * PI * u2).sin());
            }
            let v = DVector::from_iterator(n, z.into_iter().take(n));
            let nv = v.norm();
            v / nv
        })
        .collect()
}

/// Product grid in hyperspherical angles: `per_axis^(n-1)` points, polar
/// angles at cell midpoints and the azimuth on a periodic grid.
pub fn product_grid(n: usize, per_axis: usize) -> Vec<DVector<f64>> {
    let m = n - 1;
    let total = per_axis.pow(m as u32);
    (0..total)
        .map(|mut code| {
            let mut angles = Vec::with_capacity(m);
            for _ in 0..m {
                angles.push(code % per_axis);
                code /= per_axis;
            }
            let mut v = DVector::zeros(n);
            let mut sin_prod = 1.0;
            for (a, &k) in angles.iter().enumerate() {
                if a + 1 < m {
                    let th = PI * (k as f64 + 0.5) / per_axis as f64;
                    v[a] = sin_prod * th.cos();
                    sin_prod *= th.sin();
                } else {
                    let ph = 2.0 * PI * (k as f64 + 0.5) / per_axis as f64;
                    v[a] = sin_prod * ph.cos();
                    v[a + 1] = sin_prod * ph.sin();
                }
            }
            v
        })
        .collect()
}

/// Latitude/longitude grid on S^2, row-major with `rows` latitudes (cell
/// midpoints) and `cols` longitudes.
pub fn lat_long(rows: usize, cols: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let th = PI * (i as f64 + 0.5) / rows as f64;
        for j in 0..cols {
            let ph = 2.0 * PI * j as f64 / cols as f64;
            out.push(DVector::from_vec(vec![
                th.sin() * ph.cos(),
                th.sin() * ph.sin(),
                th.cos(),
            ]));
        }
    }
    out
}

/// Uniformly random unit vectors.
pub fn random_directions<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| loop {
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let nv = v.norm();
            if nv > 1e-8 {
                break v / nv;
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{richardson_first, richardson_second};

    #[test]
    fn chart_is_orthonormal_at_center_and_maps_to_sphere() {
        let c = DVector::from_vec(vec![0.2, -0.5, 0.7, 0.1]);
        let chart = SphereChart::centered(&c).unwrap();
        let j0 = chart.eval(&DVector::zeros(3));
        assert!((&j0.point - chart.center()).norm() < 1e-15);
        for i in 0..3 {
            for k in 0..3 {
                let want = if i == k { 1.0 } else { 0.0 };
                assert!((j0.d[i].dot(&j0.d[k]) - want).abs() < 1e-14);
            }
        }
        let y = DVector::from_vec(vec![0.3, -1.1, 0.4]);
        let j = chart.eval(&y);
        assert!((j.point.norm() - 1.0).abs() < 1e-14);
        let back = chart.inverse(&j.point).unwrap();
        assert!((back - &y).norm() < 1e-13);
        let g = DMatrix::from_fn(3, 3, |a, b| j.d[a].dot(&j.d[b]));
        assert!((g - chart.round_metric(&y)).abs().max() < 1e-14);
    }

    #[test]
    fn chart_derivatives_match_finite_differences() {
        let chart = SphereChart::centered(&DVector::from_vec(vec![0.0, 0.6, 0.8])).unwrap();
        let y = DVector::from_vec(vec![0.25, -0.4]);
        let f = |z: &DVector<f64>| -> Result<DVector<f64>> { Ok(chart.eval(z).point) };
        let j = chart.eval(&y);
        for i in 0..2 {
            let d = richardson_first(&f, &y, i, 1e-3).unwrap();
            assert!((d - &j.d[i]).norm() < 1e-10);
            for k in 0..2 {
                let dd = richardson_second(&f, &y, i, k, 1e-3).unwrap();
                assert!((dd - &j.dd[i][k]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn grids_are_unit_and_sized() {
        assert_eq!(fibonacci_sphere(100).len(), 100);
        for v in halton_sphere(5, 50).iter().chain(product_grid(4, 5).iter()) {
            assert!((v.norm() - 1.0).abs() < 1e-13);
        }
        assert_eq!(product_grid(4, 5).len(), 125);
        assert_eq!(lat_long(20, 40).len(), 800);
    }
}
