//! Small dense linear-algebra and finite-difference helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{GeomError, Result};

/// Step sizes for the finite-difference paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    /// Step for first derivatives.
    pub step: f64,
    /// Step for second differences.
    pub second_step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-4,
            second_step: 1e-3,
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

/// Eigen-decomposition of the pencil `(a, g)` with `a` symmetric and `g`
/// symmetric positive definite. Eigenvalues ascend; eigenvector columns are
/// `g`-orthonormal.
pub fn sym_gen_eigen(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = g.clone().cholesky().ok_or(GeomError::RankDeficient)?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(GeomError::RankDeficient)?;
    let m = symmetrize(&(&linv * a * linv.transpose()));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs_l = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let vecs = linv.transpose() * vecs_l;
    Ok((vals, vecs))
}

/// Real parts of the eigenvalues of a general square matrix whose spectrum
/// is known to be real up to rounding.
pub fn real_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.re).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn check_step(y: &DVector<f64>, i: usize, h: f64) -> Result<()> {
    if !(h > 1e-12) || y[i] + 0.25 * h == y[i] {
        return Err(GeomError::StepUnderflow(h));
    }
    Ok(())
}

fn offset(y: &DVector<f64>, moves: &[(usize, f64)]) -> DVector<f64> {
    let mut z = y.clone();
    for &(i, d) in moves {
        z[i] += d;
    }
    z
}

/// Central first difference along coordinate `i` with one Richardson step.
pub fn richardson_first<F>(f: &F, y: &DVector<f64>, i: usize, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    check_step(y, i, h)?;
    let d = |s: f64| -> Result<DVector<f64>> {
        Ok((f(&offset(y, &[(i, s)]))? - f(&offset(y, &[(i, -s)]))?) / (2.0 * s))
    };
    let coarse = d(h)?;
    let fine = d(0.5 * h)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Central second difference `d^2 f / dy_i dy_j` with one Richardson step.
pub fn richardson_second<F>(
    f: &F,
    y: &DVector<f64>,
    i: usize,
    j: usize,
    h: f64,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    check_step(y, i, h)?;
    check_step(y, j, h)?;
    let d = |s: f64| -> Result<DVector<f64>> {
        if i == j {
            let c = f(y)?;
            Ok((f(&offset(y, &[(i, s)]))? - c * 2.0 + f(&offset(y, &[(i, -s)]))?) / (s * s))
        } else {
            let pp = f(&offset(y, &[(i, s), (j, s)]))?;
            let pm = f(&offset(y, &[(i, s), (j, -s)]))?;
            let mp = f(&offset(y, &[(i, -s), (j, s)]))?;
            let mm = f(&offset(y, &[(i, -s), (j, -s)]))?;
            Ok((pp - pm - mp + mm) / (4.0 * s * s))
        }
    };
    let coarse = d(h)?;
    let fine = d(0.5 * h)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Covariant 4-tensor `Rm(a, b, c, d) = g(R(∂a, ∂b)∂c, ∂d)` with
/// `R(X, Y) = [∇X, ∇Y] - ∇[X, Y]`, so that sectional curvature is
/// `Rm(X, Y, Y, X) / |X ∧ Y|^2`.
#[derive(Clone, Debug)]
pub struct CurvatureTensor {
    pub dim: usize,
    pub metric: DMatrix<f64>,
    data: Vec<f64>,
}

impl CurvatureTensor {
    pub fn zeros(dim: usize, metric: DMatrix<f64>) -> Self {
        CurvatureTensor {
            dim,
            metric,
            data: vec![0.0; dim.pow(4)],
        }
    }

    fn idx(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dim + b) * self.dim + c) * self.dim + d
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.idx(a, b, c, d)]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        let k = self.idx(a, b, c, d);
        self.data[k] = v;
    }

    /// Evaluates the tensor on four coordinate vectors.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let m = self.dim;
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                let ab = x[a] * y[b];
                if ab == 0.0 {
                    continue;
                }
                for c in 0..m {
                    for d in 0..m {
                        acc += ab * z[c] * w[d] * self.get(a, b, c, d);
                    }
                }
            }
        }
        acc
    }

    pub fn sectional(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let g = &self.metric;
        let gxx = x.dot(&(g * x));
        let gyy = y.dot(&(g * y));
        let gxy = x.dot(&(g * y));
        self.eval(x, y, y, x) / (gxx * gyy - gxy * gxy)
    }

    /// Ricci form `Ric(b, c) = sum g^{ad} Rm(a, b, c, d)` in coordinates.
    pub fn ricci(&self) -> Result<DMatrix<f64>> {
        let m = self.dim;
        let ginv = self
            .metric
            .clone()
            .try_inverse()
            .ok_or(GeomError::RankDeficient)?;
        Ok(DMatrix::from_fn(m, m, |b, c| {
            let mut acc = 0.0;
            for a in 0..m {
                for d in 0..m {
                    acc += ginv[(a, d)] * self.get(a, b, c, d);
                }
            }
            acc
        }))
    }

    /// Kulkarni–Nomizu product of two symmetric forms, with `metric` as the
    /// metric used for sectional curvatures.
    pub fn kulkarni_nomizu(h: &DMatrix<f64>, k: &DMatrix<f64>, metric: DMatrix<f64>) -> Self {
        let m = h.nrows();
        let mut out = CurvatureTensor::zeros(m, metric);
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        let v = h[(a, d)] * k[(b, c)] + h[(b, c)] * k[(a, d)]
                            - h[(a, c)] * k[(b, d)]
                            - h[(b, d)] * k[(a, c)];
                        out.set(a, b, c, d, v);
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn sum(&self, other: &CurvatureTensor) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    pub fn max_abs_diff(&self, other: &CurvatureTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
    }
}

fn christoffel_from(g: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    // gamma[e][(b, c)] = Γ^e_bc
    let m = g.nrows();
    let ginv = g.clone().try_inverse().ok_or(GeomError::RankDeficient)?;
    Ok((0..m)
        .map(|e| {
            DMatrix::from_fn(m, m, |b, c| {
                let mut acc = 0.0;
                for f in 0..m {
                    acc += ginv[(e, f)] * (dg[b][(f, c)] + dg[c][(f, b)] - dg[f][(b, c)]);
                }
                0.5 * acc
            })
        })
        .collect())
}

fn flatten(ms: &[DMatrix<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        ms.iter().map(|m| m.len()).sum(),
        ms.iter().flat_map(|m| m.iter().copied()),
    )
}

/// Christoffel symbols `gamma[e][(b, c)] = Γ^e_bc` of a metric field, from
/// central differences of the metric.
pub fn fd_christoffel<G>(metric: &G, y: &DVector<f64>, h: f64) -> Result<Vec<DMatrix<f64>>>
where
    G: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let m = y.len();
    let flat_metric = |z: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(metric(z)?.as_slice()))
    };
    let mut dg = Vec::with_capacity(m);
    for i in 0..m {
        let d = richardson_first(&flat_metric, y, i, h)?;
        dg.push(DMatrix::from_column_slice(m, m, d.as_slice()));
    }
    christoffel_from(&metric(y)?, &dg)
}

/// Finite-difference Riemann tensor of a metric field given in coordinates.
///
/// Christoffel symbols come from central differences of `metric`, and their
/// derivatives from central differences of those; both use Richardson.
pub fn fd_riemann<G>(metric: &G, y: &DVector<f64>, h: f64) -> Result<CurvatureTensor>
where
    G: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let m = y.len();
    let christoffel_at =
        |z: &DVector<f64>| -> Result<DVector<f64>> { Ok(flatten(&fd_christoffel(metric, z, h)?)) };
    let unflatten = |v: &DVector<f64>| -> Vec<DMatrix<f64>> {
        (0..m)
            .map(|e| DMatrix::from_column_slice(m, m, &v.as_slice()[e * m * m..(e + 1) * m * m]))
            .collect()
    };
    let g = metric(y)?;
    let gamma = unflatten(&christoffel_at(y)?);
    let mut dgamma = Vec::with_capacity(m);
    for a in 0..m {
        dgamma.push(unflatten(&richardson_first(&christoffel_at, y, a, h)?));
    }
    let mut rm = CurvatureTensor::zeros(m, g.clone());
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                // (R(∂a,∂b)∂c)^e
                let mut r = DVector::zeros(m);
                for e in 0..m {
                    let mut v = dgamma[a][e][(b, c)] - dgamma[b][e][(a, c)];
                    for f in 0..m {
                        v += gamma[f][(b, c)] * gamma[e][(a, f)] - gamma[f][(a, c)] * gamma[e][(b, f)];
                    }
                    r[e] = v;
                }
                let lowered = &g * r;
                for d in 0..m {
                    rm.set(a, b, c, d, lowered[d]);
                }
            }
        }
    }
    Ok(rm)
}
