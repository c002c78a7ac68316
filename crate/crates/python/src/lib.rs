//! Python bindings for `horodual`.

use horodual::admissibility::{admissibility_test, default_grid, reconstruct_surface, roundtrip_deviation, AdmissibilityReport};
use horodual::duality::{dualize, gauss_map_conformality, relation_check, weingarten_inversion};
use horodual::factor::{ConformalFactor, FactorSpec};
use horodual::hypersurface::{build_surface, classify_convexity, FamilySpec, Site, SurfaceFamily};
use horodual::lorentz::{self, BallModel, HPoint, Horosphere, MVec};
use horodual::sphere::low_discrepancy;
use horodual::GeomError;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};
use serde::de::DeserializeOwned;

fn err(e: GeomError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Accepts a JSON string or any JSON-serializable Python object.
fn parse<T: DeserializeOwned>(spec: &Bound<'_, PyAny>) -> PyResult<T> {
    let text = if let Ok(s) = spec.cast::<PyString>() {
        s.to_string()
    } else {
        let json = spec.py().import("json")?;
        json.call_method1("dumps", (spec,))?.extract::<String>()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("bad spec: {e}")))
}

fn grid(n: usize, count: Option<usize>) -> Vec<DVector<f64>> {
    match count {
        Some(c) => low_discrepancy(n, c),
        None => default_grid(n),
    }
}

fn ball(model: &str) -> PyResult<BallModel> {
    model.parse().map_err(err)
}

/// Minkowski inner product `-u0 v0 + sum ui vi`.
#[pyfunction]
fn minkowski_inner(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    lorentz::mink_inner(&MVec::new(u), &MVec::new(v)).map_err(err)
}

/// Hyperbolic distance between two hyperboloid points.
#[pyfunction]
fn hdist(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    let x = HPoint::new(MVec::new(x)).map_err(err)?;
    let y = HPoint::new(MVec::new(y)).map_err(err)?;
    Ok(lorentz::hdist(&x, &y))
}

#[pyfunction]
fn busemann(xi: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
    let xi = Horosphere::new(MVec::new(xi)).map_err(err)?;
    let x = HPoint::new(MVec::new(x)).map_err(err)?;
    Ok(lorentz::busemann(&xi, &x))
}

#[pyfunction]
#[pyo3(signature = (x, model = "poincare"))]
fn to_ball(x: Vec<f64>, model: &str) -> PyResult<Vec<f64>> {
    let x = HPoint::new(MVec::new(x)).map_err(err)?;
    Ok(lorentz::to_ball(&x, ball(model)?).iter().copied().collect())
}

#[pyfunction]
#[pyo3(signature = (y, model = "poincare"))]
fn from_ball(y: Vec<f64>, model: &str) -> PyResult<Vec<f64>> {
    let x = lorentz::from_ball(&DVector::from_vec(y), ball(model)?).map_err(err)?;
    Ok(x.vec().to_vec())
}

/// `(E + B)^{-1}` for a Weingarten matrix `B`.
#[pyfunction]
fn weingarten_inverse(b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&weingarten_inversion(&matrix(&b)?).map_err(err)?))
}

/// A family of hypersurfaces, built from a spec such as
/// `{"family": "geodesic_sphere", "radius": 1.0}`.
#[pyclass(frozen)]
struct Surface {
    inner: SurfaceFamily,
}

impl Surface {
    fn site(&self, at: Vec<f64>) -> PyResult<Site> {
        let v = DVector::from_vec(at);
        if self.inner.is_spherical() {
            Site::on_sphere(&v).map_err(err)
        } else {
            Ok(Site::flat(v))
        }
    }
}

#[pymethods]
impl Surface {
    #[new]
    fn new(n: usize, spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let spec: FamilySpec = parse(spec)?;
        Ok(Surface { inner: build_surface(n, &spec).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn kind(&self) -> String {
        serde_json::to_value(self.inner.kind()).unwrap().as_str().unwrap_or_default().to_string()
    }

    /// Parameters of `count` sample sites: unit directions for spherical
    /// families, chart coordinates otherwise.
    fn sites(&self, count: usize) -> PyResult<Vec<Vec<f64>>> {
        let sites = self.inner.sites(count).map_err(err)?;
        Ok(sites
            .iter()
            .map(|s| s.direction().unwrap_or_else(|| s.y().clone()).iter().copied().collect())
            .collect())
    }

    /// Point, dual horosphere and forms at one site.
    fn dual_at<'py>(&self, py: Python<'py>, at: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let jet = self.inner.jet(&self.site(at)?).map_err(err)?;
        let dual = dualize(&jet).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("point", jet.x.vec().to_vec())?;
        d.set_item("phi", dual.phi.vec().to_vec())?;
        d.set_item("principal_curvatures", dual.forms.k.clone())?;
        d.set_item("mean_curvature", dual.forms.h_mean)?;
        d.set_item("first", rows(&dual.forms.i))?;
        d.set_item("second", rows(&dual.forms.ii))?;
        d.set_item("third", rows(&dual.forms.iii))?;
        d.set_item("istar", rows(&dual.istar_pullback))?;
        let cls = serde_json::to_value(classify_convexity(&dual.forms)).unwrap();
        d.set_item("convexity", cls.as_str().unwrap_or_default())?;
        Ok(d)
    }

    /// Ratio range of the Gauss map pullback to the dual metric.
    fn gauss_ratio(&self, at: Vec<f64>) -> PyResult<(f64, f64)> {
        let jet = self.inner.jet(&self.site(at)?).map_err(err)?;
        let g = gauss_map_conformality(&jet).map_err(err)?;
        Ok((g.ratio_min, g.ratio_max))
    }

    /// `(K, H, k*, k* from K and H)` for a surface in H^3.
    fn curvature_relation(&self, at: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
        let jet = self.inner.jet(&self.site(at)?).map_err(err)?;
        let r = relation_check(&jet).map_err(err)?;
        Ok((r.k, r.h_mean, r.kstar_analytic, r.kstar_formula))
    }

    fn __repr__(&self) -> String {
        format!("Surface(n={}, kind={})", self.inner.n(), self.kind())
    }
}

#[pyclass(frozen, name = "AdmissibilityReport")]
struct Report {
    inner: AdmissibilityReport,
}

#[pymethods]
impl Report {
    #[getter]
    fn class_name(&self) -> String {
        self.inner.class.to_string()
    }
    #[getter]
    fn h_admissible(&self) -> bool {
        self.inner.is_h_admissible()
    }
    #[getter]
    fn c_admissible(&self) -> bool {
        self.inner.is_c_admissible()
    }
    #[getter]
    fn min_kstar(&self) -> f64 {
        self.inner.min_kstar
    }
    #[getter]
    fn max_kstar(&self) -> f64 {
        self.inner.max_kstar
    }
    #[getter]
    fn worst_margin(&self) -> f64 {
        self.inner.worst_margin
    }
    #[getter]
    fn worst_direction(&self) -> Vec<f64> {
        self.inner.worst_direction().to_vec()
    }
    #[getter]
    fn route_gap(&self) -> Option<f64> {
        self.inner.route_gap
    }
    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples.len()
    }
    fn summary(&self) -> String {
        self.inner.summary()
    }
    fn __repr__(&self) -> String {
        format!("AdmissibilityReport({})", self.inner.summary())
    }
}

/// A conformal factor `u` on S^{n-1}, built from a spec such as
/// `{"type": "constant", "value": 1.0}`.
#[pyclass(frozen)]
struct Factor {
    inner: ConformalFactor,
}

#[pymethods]
impl Factor {
    #[new]
    fn new(n: usize, spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let spec: FactorSpec = parse(spec)?;
        Ok(Factor { inner: ConformalFactor::new(n, spec).map_err(err)? })
    }

    #[staticmethod]
    fn constant(n: usize, value: f64) -> PyResult<Self> {
        Ok(Factor { inner: ConformalFactor::constant(n, value).map_err(err)? })
    }

    fn value(&self, s: Vec<f64>) -> f64 {
        self.inner.value(&DVector::from_vec(s))
    }

    /// Checks admissibility on `count` low-discrepancy directions, or on the
    /// default grid when `count` is omitted.
    #[pyo3(signature = (count = None))]
    fn admissibility(&self, count: Option<usize>) -> PyResult<Report> {
        let g = grid(self.inner.n(), count);
        Ok(Report { inner: admissibility_test(&self.inner, &g).map_err(err)? })
    }

    /// Builds the hypersurface whose dual metric is `e^{2u}` times the round
    /// metric. Returns `(surface, report, roundtrip_deviation)`.
    #[pyo3(signature = (base = None, count = None))]
    fn reconstruct(&self, base: Option<Vec<f64>>, count: Option<usize>) -> PyResult<(Surface, Report, f64)> {
        let n = self.inner.n();
        let x0 = match base {
            Some(b) => HPoint::new(MVec::new(b)).map_err(err)?,
            None => HPoint::origin(n),
        };
        let g = grid(n, count);
        let (fam, report) = reconstruct_surface(&self.inner, &x0, &g).map_err(err)?;
        let dev = roundtrip_deviation(&fam, &self.inner, &g).map_err(err)?;
        Ok((Surface { inner: fam }, Report { inner: report }, dev))
    }
}

#[pymodule]
fn horodual_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Surface>()?;
    m.add_class::<Factor>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(minkowski_inner, m)?)?;
    m.add_function(wrap_pyfunction!(hdist, m)?)?;
    m.add_function(wrap_pyfunction!(busemann, m)?)?;
    m.add_function(wrap_pyfunction!(to_ball, m)?)?;
    m.add_function(wrap_pyfunction!(from_ball, m)?)?;
    m.add_function(wrap_pyfunction!(weingarten_inverse, m)?)?;
    Ok(())
}
