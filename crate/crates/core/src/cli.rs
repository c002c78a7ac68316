//! Batch front end: JSON configuration in, JSON/CSV reports and OFF meshes
//! out.
//!
//! Exit codes: 0 when every check passes, 1 when a check or the
//! admissibility test fails, 2 when the configuration is invalid.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admissibility::{
    admissibility_test, default_grid, reconstruct_surface, roundtrip_deviation, AdmissibilityClass,
    AdmissibilityReport,
};
use crate::duality::{
    de_sitter_dual, double_dual_defect, dualize, equidistant_envelope, gauss_map_conformality,
    relation_check, sample_double_dual_defect, weingarten_inversion,
};
use crate::error::GeomError;
use crate::factor::{ConformalFactor, FactorSpec};
use crate::horospace::{cone_embed, cone_embed_tangent, curvature_star, g0_inner, GraphSurface};
use crate::hypersurface::{
    build_surface, classify_convexity, forms_at, horospherical_metric_direct, Convexity, FamilyKind,
    FamilySpec, Site, SurfaceFamily,
};
use crate::isometry::{make_isometry, Isometry, IsometrySpec, Orientation};
use crate::lorentz::{to_ball, BallModel, DeSitterPoint, HPoint, MVec};
use crate::numeric::FdConfig;
use crate::sphere::{halton_cube, lat_long, low_discrepancy, product_grid, random_directions, SphereChart};

pub const SCHEMA: &str = "horodual.run/1";

/// Registered verification checks, in report order.
pub const CHECKS: [&str; 11] = [
    "dual_metric",
    "inversion",
    "double_dual",
    "gauss_star",
    "codazzi",
    "curvature_relation",
    "conformal_gauss_map",
    "de_sitter",
    "envelope_isometry",
    "isometry_equivariance",
    "cone_embed",
];

/// Default tolerances for analytic jets and for finite-difference jets.
fn default_tolerance(check: &str, fd_jets: bool) -> f64 {
    let (analytic, fd) = match check {
        "dual_metric" | "de_sitter" => (1e-9, 1e-5),
        "inversion" => (1e-7, 1e-5),
        "double_dual" => (1e-6, 1e-6),
        "gauss_star" => (1e-6, 1e-6),
        "codazzi" => (1e-5, 1e-5),
        "curvature_relation" => (1e-9, 1e-9),
        "conformal_gauss_map" => (1e-6, 1e-5),
        "envelope_isometry" => (1e-6, 1e-5),
        "isometry_equivariance" => (1e-10, 1e-10),
        "cone_embed" => (1e-12, 1e-12),
        "roundtrip" => (1e-9, 1e-5),
        _ => (1e-9, 1e-9),
    };
    if fd_jets {
        fd
    } else {
        analytic
    }
}

/// Graph checks evaluate a finite-difference Riemann tensor per sample and
/// are run on at most this many samples.
const CURVATURE_SAMPLES: usize = 48;
const DEFAULT_SAMPLES: usize = 200;
const ROUNDTRIP_SAMPLES: usize = 200;
/// Per-sample admissibility tables are written up to this size.
const SAMPLE_CSV_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    LowDiscrepancy { count: usize },
    Product { per_axis: usize },
    LatLong { rows: usize, cols: usize },
    Random { count: usize },
}

impl GridSpec {
    pub fn directions(&self, n: usize, seed: u64) -> Result<Vec<DVector<f64>>, CliError> {
        let out = match *self {
            GridSpec::LowDiscrepancy { count } => low_discrepancy(n, count),
            GridSpec::Product { per_axis } => product_grid(n, per_axis),
            GridSpec::LatLong { rows, cols } => {
                if n != 3 {
                    return Err(CliError::Config("lat_long grids need n = 3".into()));
                }
                lat_long(rows, cols)
            }
            GridSpec::Random { count } => {
                random_directions(n, count, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        };
        if out.is_empty() {
            return Err(CliError::Config("the grid is empty".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default = "default_model")]
    pub model: BallModel,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_cols")]
    pub cols: usize,
    /// File name inside the output directory.
    #[serde(default = "default_mesh_file")]
    pub file: String,
}

fn default_model() -> BallModel {
    BallModel::Poincare
}
fn default_rows() -> usize {
    20
}
fn default_cols() -> usize {
    40
}
fn default_mesh_file() -> String {
    "mesh.off".into()
}

fn default_checks() -> Vec<String> {
    vec!["all".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub n: usize,
    #[serde(default)]
    pub surface: Option<FamilySpec>,
    #[serde(default)]
    pub factor: Option<FactorSpec>,
    /// Base point of graphs and reconstructions (default: the origin).
    #[serde(default)]
    pub base: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Distance field for `envelope_isometry` (default: a small seeded
    /// linear factor).
    #[serde(default)]
    pub shift: Option<FactorSpec>,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA {
            return Err(CliError::Config(format!(
                "unsupported schema '{}', expected '{SCHEMA}'",
                self.schema
            )));
        }
        if !(3..=5).contains(&self.n) {
            return Err(CliError::Config(format!("n must be 3, 4 or 5, got {}", self.n)));
        }
        for c in &self.checks {
            if c != "all" && !CHECKS.contains(&c.as_str()) {
                return Err(CliError::Config(format!("unknown check '{c}'")));
            }
        }
        for (k, &v) in &self.tolerances {
            if k != "roundtrip" && !CHECKS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("tolerance for unknown check '{k}'")));
            }
            check_tol(v)?;
        }
        Ok(())
    }

    /// Checks to run, deduplicated, in registry order.
    pub fn check_list(&self) -> Vec<&'static str> {
        let all = self.checks.iter().any(|c| c == "all");
        CHECKS
            .iter()
            .copied()
            .filter(|c| all || self.checks.iter().any(|d| d == c))
            .collect()
    }

    fn base_point(&self) -> Result<HPoint, CliError> {
        match &self.base {
            None => Ok(HPoint::origin(self.n)),
            Some(v) => {
                if v.len() != self.n + 1 {
                    return Err(CliError::Config(format!(
                        "base needs {} coordinates",
                        self.n + 1
                    )));
                }
                HPoint::new(MVec::from_slice(v)).map_err(config_err)
            }
        }
    }

    fn factor(&self) -> Result<Option<ConformalFactor>, CliError> {
        self.factor
            .as_ref()
            .map(|f| ConformalFactor::new(self.n, f.clone()).map_err(config_err))
            .transpose()
    }

    fn require_factor(&self) -> Result<ConformalFactor, CliError> {
        self.factor()?
            .ok_or_else(|| CliError::Config("this verb needs a 'factor'".into()))
    }

    /// The surface under test: `surface`, or the reconstruction of `factor`.
    fn family(&self) -> Result<SurfaceFamily, CliError> {
        let spec = match (&self.surface, &self.factor) {
            (Some(s), _) => s.clone(),
            (None, Some(f)) => FamilySpec::Reconstructed {
                base: self.base.clone(),
                factor: f.clone(),
            },
            (None, None) => {
                return Err(CliError::Config(
                    "the configuration needs a 'surface' or a 'factor'".into(),
                ))
            }
        };
        build_surface(self.n, &spec).map_err(config_err)
    }
}

fn check_tol(v: f64) -> Result<(), CliError> {
    if !v.is_finite() || v < 0.0 {
        return Err(CliError::Config(format!("tolerance {v} is not a non-negative number")));
    }
    Ok(())
}

fn config_err(e: GeomError) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Geom(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
    Error,
}

impl Status {
    fn is_failure(self) -> bool {
        matches!(self, Status::Fail | Status::Error)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub max_deviation: Option<f64>,
    pub tolerance: f64,
    pub samples: usize,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilitySummary {
    pub class: AdmissibilityClass,
    pub samples: usize,
    pub min_kstar: f64,
    pub max_kstar: f64,
    pub worst_margin: f64,
    pub worst_sample: usize,
    pub worst_direction: Vec<f64>,
    pub route_gap: Option<f64>,
    pub routes_agree: bool,
    pub min_sectional: f64,
    pub max_sectional: f64,
    pub message: String,
}

impl From<&AdmissibilityReport> for AdmissibilitySummary {
    fn from(r: &AdmissibilityReport) -> Self {
        AdmissibilitySummary {
            class: r.class,
            samples: r.samples.len(),
            min_kstar: r.min_kstar,
            max_kstar: r.max_kstar,
            worst_margin: r.worst_margin,
            worst_sample: r.worst_sample,
            worst_direction: r.worst_direction().to_vec(),
            route_gap: r.route_gap,
            routes_agree: r.routes_agree,
            min_sectional: r.min_sectional,
            max_sectional: r.max_sectional,
            message: r.summary(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub path: String,
    pub model: BallModel,
    pub vertices: usize,
    pub faces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: String,
    pub verb: String,
    pub status: Status,
    pub seed: u64,
    pub config: RunConfig,
    pub checks: Vec<CheckResult>,
    pub admissibility: Option<AdmissibilitySummary>,
    pub mesh: Option<MeshInfo>,
    /// Wall-clock timings; the only nondeterministic field.
    pub timing_ms: BTreeMap<String, f64>,
}

impl Report {
    fn new(verb: &str, config: &RunConfig) -> Self {
        Report {
            schema: SCHEMA.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            verb: verb.into(),
            status: Status::Pass,
            seed: config.seed,
            config: config.clone(),
            checks: Vec::new(),
            admissibility: None,
            mesh: None,
            timing_ms: BTreeMap::new(),
        }
    }

    fn finish(&mut self) {
        let failed = self.checks.iter().any(|c| c.status.is_failure())
            || self
                .admissibility
                .as_ref()
                .is_some_and(|a| !matches!(a.class, AdmissibilityClass::HAdmissible | AdmissibilityClass::CAdmissible));
        self.status = if failed { Status::Fail } else { Status::Pass };
    }

    pub fn exit_code(&self) -> i32 {
        if self.status == Status::Pass {
            0
        } else {
            1
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(GeomError::from)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| GeomError::Io(e.to_string()))?;
        fs::write(dir.join("report.json"), json + "\n").map_err(GeomError::from)?;
        let mut w = csv::Writer::from_path(dir.join("report.csv")).map_err(csv_err)?;
        w.write_record(["check", "status", "max_deviation", "tolerance", "samples", "detail"])
            .map_err(csv_err)?;
        for c in &self.checks {
            w.write_record([
                c.name.clone(),
                serde_json::to_value(c.status).map_err(|e| GeomError::Io(e.to_string()))?.as_str().unwrap_or("").to_string(),
                c.max_deviation.map_or(String::new(), |d| format!("{d:e}")),
                format!("{:e}", c.tolerance),
                c.samples.to_string(),
                c.detail.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(GeomError::from)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Geom(GeomError::Io(e.to_string()))
}

/// Everything a check needs.
struct Context {
    n: usize,
    family: SurfaceFamily,
    fd_jets: bool,
    sites: Vec<Site>,
    graph: Option<GraphSurface>,
    graph_sites: Vec<(SphereChart, DVector<f64>)>,
    shift: Option<FactorSpec>,
    seed: u64,
}

struct Outcome {
    deviation: f64,
    samples: usize,
    detail: Option<String>,
}

enum CheckRun {
    Done(Outcome),
    Skipped(String),
}

type CheckResultInner = Result<CheckRun, GeomError>;

/// Maximum that propagates NaN.
fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc: f64, v| {
        if v.is_nan() || acc.is_nan() {
            f64::NAN
        } else {
            acc.max(v)
        }
    })
}

fn over_sites<F>(sites: &[Site], f: F) -> Result<Outcome, GeomError>
where
    F: Fn(&Site) -> Result<f64, GeomError> + Sync + Send,
{
    let vals: Vec<f64> = sites.par_iter().map(f).collect::<Result<_, _>>()?;
    Ok(Outcome {
        deviation: worst(vals.iter().copied()),
        samples: vals.len(),
        detail: None,
    })
}

fn rel(diff: &DMatrix<f64>, scale: &DMatrix<f64>) -> f64 {
    diff.abs().max() / scale.abs().max().max(1.0)
}

fn family_graph(family: &SurfaceFamily) -> Option<GraphSurface> {
    if family.transform().is_some() {
        return None;
    }
    if let Some(g) = family.graph() {
        return Some(g.clone());
    }
    let (center, radius) = family.sphere_data()?;
    GraphSurface::new(center, ConformalFactor::constant(family.n(), radius).ok()?).ok()
}

/// Rotation, translation, parabolic element and both hyperplane
/// extensions, drawn from `seed`.
pub fn seeded_isometries(n: usize, seed: u64) -> Result<Vec<(String, Isometry)>, GeomError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_150);
    let len = n + 1;
    let point = |rng: &mut ChaCha8Rng| -> Result<HPoint, GeomError> {
        let d = random_directions(n, 1, rng).remove(0);
        let r: f64 = rng.random_range(0.0..0.8);
        let mut v = vec![r.cosh()];
        v.extend(d.iter().map(|c| r.sinh() * c));
        HPoint::new(MVec::new(v))
    };
    let tangent = |rng: &mut ChaCha8Rng, x: &HPoint| -> MVec {
        let mut v = MVec::zeros(len);
        for k in 1..len {
            v[k] = rng.random_range(-1.0..1.0);
        }
        v.axpy(v.inner(x.vec()), x.vec())
    };
    let mut out = Vec::new();

    let c = point(&mut rng)?;
    let plane = (tangent(&mut rng, &c), tangent(&mut rng, &c));
    let angle = rng.random_range(0.3..2.5);
    out.push((
        "rotation".to_string(),
        make_isometry(&IsometrySpec::Rotation {
            center: c,
            plane,
            angle,
        })?,
    ));

    let p = point(&mut rng)?;
    let direction = tangent(&mut rng, &p);
    let length = rng.random_range(0.2..1.0);
    out.push((
        "translation".to_string(),
        make_isometry(&IsometrySpec::Translation {
            point: p,
            direction,
            length,
        })?,
    ));

    let d = random_directions(n, 2, &mut rng);
    let mut fixed = vec![1.0];
    fixed.extend(d[0].iter());
    let fixed = MVec::new(fixed);
    let w = &d[1] - &d[0] * d[0].dot(&d[1]);
    let mut shear = vec![0.0];
    shear.extend(w.iter().map(|c| 0.5 * c));
    out.push((
        "parabolic".to_string(),
        make_isometry(&IsometrySpec::Parabolic {
            fixed: crate::lorentz::Horosphere::new(fixed)?,
            shear: MVec::new(shear),
        })?,
    ));

    let mut pole = vec![rng.random_range(-0.4..0.4)];
    pole.extend(random_directions(n, 1, &mut rng).remove(0).iter());
    let pole = DeSitterPoint::normalize(MVec::new(pole))?;
    // boost then rotation of the hyperplane, in its Lorentz frame
    let (b, th) = (rng.random_range(0.1..0.6f64), rng.random_range(0.2..1.5f64));
    let mut boost = DMatrix::identity(n, n);
    boost[(0, 0)] = b.cosh();
    boost[(1, 1)] = b.cosh();
    boost[(0, 1)] = b.sinh();
    boost[(1, 0)] = b.sinh();
    let mut rot = DMatrix::identity(n, n);
    rot[(1, 1)] = th.cos();
    rot[(2, 2)] = th.cos();
    rot[(1, 2)] = -th.sin();
    rot[(2, 1)] = th.sin();
    let map = rot * boost;
    for (name, orientation) in [
        ("extension+", Orientation::Preserving),
        ("extension-", Orientation::Reversing),
    ] {
        out.push((
            name.to_string(),
            make_isometry(&IsometrySpec::ExtendFromHyperplane {
                pole: pole.clone(),
                map: map.clone(),
                orientation,
            })?,
        ));
    }
    Ok(out)
}

fn run_one(name: &str, ctx: &Context) -> CheckResultInner {
    let sites = &ctx.sites;
    let fd = ctx.family.fd();
    let graph_sites = || &ctx.graph_sites[..ctx.graph_sites.len().min(CURVATURE_SAMPLES)];
    Ok(CheckRun::Done(match name {
        "dual_metric" => over_sites(sites, |s| {
            let dual = dualize(&ctx.family.jet(s)?)?;
            let direct = horospherical_metric_direct(&dual.forms);
            Ok(rel(&(&dual.istar_pullback - &direct), &direct))
        })?,
        "inversion" => over_sites(sites, |s| {
            let forms = forms_at(&ctx.family.jet(s)?)?;
            let m = forms.b.nrows();
            let e = DMatrix::identity(m, m);
            let bs = weingarten_inversion(&forms.b)?;
            Ok((bs * (&e + &forms.b) - e).abs().max())
        })?,
        "double_dual" => {
            let mut out = over_sites(sites, |s| sample_double_dual_defect(&ctx.family.jet(s)?))?;
            if let Some(g) = &ctx.graph {
                let vals: Vec<f64> = ctx
                    .graph_sites
                    .par_iter()
                    .map(|(c, y)| double_dual_defect(g, c, y, &fd))
                    .collect::<Result<_, _>>()?;
                out.deviation = worst(vals.iter().copied().chain([out.deviation]));
                out.samples += vals.len();
            }
            out
        }
        "gauss_star" | "codazzi" => {
            let Some(g) = &ctx.graph else {
                return Ok(CheckRun::Skipped("no graph in C^n_+ for this surface".into()));
            };
            let gauss = name == "gauss_star";
            let vals: Vec<f64> = graph_sites()
                .par_iter()
                .map(|(c, y)| {
                    let cs = curvature_star(g, c, y, &FdConfig::default())?;
                    Ok(if gauss {
                        cs.max_sectional_gap()
                    } else {
                        cs.codazzi_defect
                    })
                })
                .collect::<Result<_, GeomError>>()?;
            Outcome {
                deviation: worst(vals.iter().copied()),
                samples: vals.len(),
                detail: None,
            }
        }
        "curvature_relation" => {
            if ctx.n != 3 {
                return Ok(CheckRun::Skipped("the relation is for surfaces in H^3".into()));
            }
            over_sites(sites, |s| {
                let r = relation_check(&ctx.family.jet(s)?)?;
                let product = (r.kstar_analytic * (r.k + 2.0 * r.h_mean + 2.0) - r.k).abs();
                Ok(r.discrepancy().max(product))
            })?
        }
        "conformal_gauss_map" => {
            let vals: Vec<Option<f64>> = sites
                .par_iter()
                .map(|s| {
                    let jet = ctx.family.jet(s)?;
                    let forms = forms_at(&jet)?;
                    if forms.k.iter().any(|&k| k <= -1.0 + 1e-6) {
                        return Ok(None);
                    }
                    let gc = gauss_map_conformality(&jet)?;
                    let phi0 = dualize(&jet)?.phi.vec()[0];
                    Ok(Some(gc.anisotropy().max((gc.ratio_max * phi0 * phi0 - 1.0).abs())))
                })
                .collect::<Result<_, GeomError>>()?;
            let used: Vec<f64> = vals.into_iter().flatten().collect();
            if used.is_empty() {
                return Ok(CheckRun::Skipped("no H-convex samples".into()));
            }
            Outcome {
                deviation: worst(used.iter().copied()),
                samples: used.len(),
                detail: None,
            }
        }
        "de_sitter" => over_sites(sites, |s| {
            let ds = de_sitter_dual(&ctx.family.jet(s)?)?;
            Ok(rel(&(&ds.metric - &ds.forms.iii), &ds.forms.iii))
        })?,
        "envelope_isometry" => {
            if ctx.family.transform().is_some()
                || (ctx.family.graph().is_none() && ctx.family.sphere_data().is_none())
            {
                return Ok(CheckRun::Skipped(
                    "needs an unmoved sphere or reconstructed surface".into(),
                ));
            }
            let spec = match &ctx.shift {
                Some(s) => s.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0xe9e1_0be);
                    let d = random_directions(ctx.n, 1, &mut rng).remove(0);
                    FactorSpec::Linear {
                        a: d.iter().map(|c| 0.05 * c).collect(),
                    }
                }
            };
            let u = ConformalFactor::new(ctx.n, spec)?;
            let moved = equidistant_envelope(&ctx.family, &u, sites)?;
            over_sites(sites, |s| {
                let a = dualize(&ctx.family.jet(s)?)?;
                let b = dualize(&moved.jet(s)?)?;
                let dir = s.direction().ok_or(GeomError::Unsupported("flat site".into()))?;
                let lhs = &a.istar_pullback * (2.0 * u.value(&dir)).exp();
                Ok(rel(&(&b.istar_pullback - &lhs), &lhs))
            })?
        }
        "isometry_equivariance" => {
            let isos = seeded_isometries(ctx.n, ctx.seed)?;
            let mut total = Outcome {
                deviation: 0.0,
                samples: 0,
                detail: Some(
                    isos.iter()
                        .map(|(n, _)| n.as_str())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
            };
            for (_, g) in &isos {
                let moved = ctx.family.transformed(g);
                let o = over_sites(sites, |s| {
                    let a = dualize(&ctx.family.jet(s)?)?;
                    let b = dualize(&moved.jet(s)?)?;
                    let ga = g.apply(a.phi.vec());
                    let dphi = (b.phi.vec() - &ga).euclid_norm() / ga.euclid_norm();
                    let dmet = rel(&(&b.istar_pullback - &a.istar_pullback), &a.istar_pullback);
                    let gn = g.apply(&a.forms.normal);
                    let dn = (&b.forms.normal - &gn).euclid_norm() / gn.euclid_norm().max(1.0);
                    Ok(dphi.max(dmet).max(dn))
                })?;
                total.deviation = worst([total.deviation, o.deviation]);
                total.samples += o.samples;
            }
            total
        }
        "cone_embed" => over_sites(sites, |s| {
            let dual = dualize(&ctx.family.jet(s)?)?;
            let c = cone_embed(&dual.phi);
            let mut dev = (c.norm_sq() - 1.0).abs();
            let m = dual.dphi.len();
            for a in 0..m {
                for b in 0..m {
                    let g0 = g0_inner(&dual.phi, &dual.dphi[a], &dual.dphi[b])?;
                    let cone = cone_embed_tangent(&dual.dphi[a]).inner(&cone_embed_tangent(&dual.dphi[b]));
                    dev = dev.max((g0 - cone).abs() / g0.abs().max(1.0));
                }
            }
            Ok(dev)
        })?,
        other => return Err(GeomError::Unsupported(format!("check '{other}'"))),
    }))
}

fn tolerance_for(cfg: &RunConfig, tol: Option<f64>, check: &str, fd_jets: bool) -> f64 {
    tol.or_else(|| cfg.tolerances.get(check).copied())
        .unwrap_or_else(|| default_tolerance(check, fd_jets))
}

fn finish_check(name: &str, tol: f64, run: CheckResultInner) -> CheckResult {
    match run {
        Ok(CheckRun::Done(o)) => CheckResult {
            name: name.into(),
            status: if o.deviation < tol { Status::Pass } else { Status::Fail },
            max_deviation: Some(o.deviation),
            tolerance: tol,
            samples: o.samples,
            detail: o.detail,
        },
        Ok(CheckRun::Skipped(why)) => CheckResult {
            name: name.into(),
            status: Status::Skipped,
            max_deviation: None,
            tolerance: tol,
            samples: 0,
            detail: Some(why),
        },
        Err(e) => CheckResult {
            name: name.into(),
            status: Status::Error,
            max_deviation: None,
            tolerance: tol,
            samples: 0,
            detail: Some(e.to_string()),
        },
    }
}

fn sites_for(family: &SurfaceFamily, dirs: &[DVector<f64>]) -> Result<Vec<Site>, GeomError> {
    if family.is_spherical() {
        dirs.iter().map(Site::on_sphere).collect()
    } else {
        Ok(halton_cube(family.n() - 1, dirs.len(), 1.0)
            .into_iter()
            .map(Site::flat)
            .collect())
    }
}

/// Options that override the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub grid: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tol {
            check_tol(t)?;
        }
        if let Some(g) = self.grid {
            if g == 0 {
                return Err(CliError::Config("--grid must be positive".into()));
            }
            cfg.grid = Some(GridSpec::LowDiscrepancy { count: g });
        }
        Ok(())
    }
}

fn directions(cfg: &RunConfig, default: impl FnOnce() -> Vec<DVector<f64>>) -> Result<Vec<DVector<f64>>, CliError> {
    match &cfg.grid {
        Some(g) => g.directions(cfg.n, cfg.seed),
        None => Ok(default()),
    }
}

fn ms(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

/// `verify`: runs the configured identity checks.
pub fn run_verify(cfg: &RunConfig, ov: &Overrides) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let family = cfg.family()?;
    let dirs = directions(cfg, || low_discrepancy(cfg.n, DEFAULT_SAMPLES))?;
    let sites = sites_for(&family, &dirs)?;
    let graph = match cfg.factor()? {
        Some(u) if cfg.surface.is_none() => Some(GraphSurface::new(cfg.base_point()?, u)?),
        _ => family_graph(&family),
    };
    let graph_sites = dirs
        .iter()
        .map(|s| {
            let c = SphereChart::centered(s)?;
            let y = DVector::zeros(c.dim());
            Ok((c, y))
        })
        .collect::<Result<_, GeomError>>()?;
    let ctx = Context {
        n: cfg.n,
        fd_jets: family.kind() == FamilyKind::Reconstructed && family.sphere_data().is_none(),
        family,
        sites,
        graph,
        graph_sites,
        shift: cfg.shift.clone(),
        seed: cfg.seed,
    };
    let mut report = Report::new("verify", cfg);
    let checks = cfg.check_list();
    let results: Vec<(CheckResult, f64)> = checks
        .par_iter()
        .map(|&name| {
            let t = Instant::now();
            let tol = tolerance_for(cfg, ov.tol, name, ctx.fd_jets);
            (finish_check(name, tol, run_one(name, &ctx)), ms(t))
        })
        .collect();
    for (r, t) in results {
        report.timing_ms.insert(r.name.clone(), t);
        report.checks.push(r);
    }
    report.timing_ms.insert("total".into(), ms(t0));
    report.finish();
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
struct DualRow {
    sample: usize,
    x: Vec<f64>,
    phi: Vec<f64>,
    principal: Vec<f64>,
    istar_eigen: Vec<f64>,
    rank: usize,
}

/// `dualize`: dual samples of the configured surface, written to
/// `dual.csv`.
pub fn run_dualize(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let family = cfg.family()?;
    let dirs = directions(cfg, || low_discrepancy(cfg.n, DEFAULT_SAMPLES))?;
    let sites = sites_for(&family, &dirs)?;
    let rows: Vec<DualRow> = sites
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let jet = family.jet(s)?;
            let dual = dualize(&jet)?;
            let eig = dual.istar_pullback.clone().symmetric_eigenvalues();
            let scale = eig.abs().max().max(1.0);
            let mut eig: Vec<f64> = eig.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            Ok(DualRow {
                sample: i,
                x: jet.x.vec().to_vec(),
                phi: dual.phi.vec().to_vec(),
                principal: dual.forms.k.clone(),
                rank: eig.iter().filter(|v| v.abs() > 1e-9 * scale).count(),
                istar_eigen: eig,
            })
        })
        .collect::<Result<_, GeomError>>()?;
    fs::create_dir_all(out).map_err(GeomError::from)?;
    let mut w = csv::Writer::from_path(out.join("dual.csv")).map_err(csv_err)?;
    let m = cfg.n - 1;
    let mut header = vec!["sample".to_string()];
    header.extend((0..=cfg.n).map(|i| format!("x{i}")));
    header.extend((0..=cfg.n).map(|i| format!("phi{i}")));
    header.extend((0..m).map(|i| format!("k{i}")));
    header.extend((0..m).map(|i| format!("istar_eig{i}")));
    header.push("rank".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in &rows {
        let mut rec = vec![r.sample.to_string()];
        rec.extend(r.x.iter().chain(&r.phi).chain(&r.principal).chain(&r.istar_eigen).map(|v| format!("{v:e}")));
        rec.push(r.rank.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(GeomError::from)?;
    let mut report = Report::new("dualize", cfg);
    let deficient = rows.iter().filter(|r| r.rank < m).count();
    report.checks.push(CheckResult {
        name: "dual_rank".into(),
        status: Status::Pass,
        max_deviation: None,
        tolerance: 0.0,
        samples: rows.len(),
        detail: Some(format!("{deficient} rank-deficient samples")),
    });
    report.timing_ms.insert("total".into(), ms(t0));
    report.finish();
    Ok(report)
}

fn write_admissibility_csv(r: &AdmissibilityReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let m = r.n - 1;
    let mut header = vec!["sample".to_string()];
    header.extend((0..r.n).map(|i| format!("s{i}")));
    header.extend((0..m).map(|i| format!("kstar{i}")));
    if r.n >= 4 {
        header.extend((0..m).map(|i| format!("kstar_ricci{i}")));
        header.push("form_max".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in r.samples.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(s.direction.iter().chain(&s.kstar).map(|v| format!("{v:e}")));
        if let Some(k) = &s.kstar_ricci {
            rec.extend(k.iter().map(|v| format!("{v:e}")));
            rec.push(format!("{:e}", s.form_max.unwrap_or(f64::NAN)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(GeomError::from)?;
    Ok(())
}

/// `admissible`: certifies H-/C-admissibility of the configured factor.
pub fn run_admissible(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let u = cfg.require_factor()?;
    let dirs = directions(cfg, || default_grid(cfg.n))?;
    let r = admissibility_test(&u, &dirs)?;
    fs::create_dir_all(out).map_err(GeomError::from)?;
    let mut report = Report::new("admissible", cfg);
    if r.samples.len() <= SAMPLE_CSV_LIMIT {
        write_admissibility_csv(&r, &out.join("admissibility.csv"))?;
    } else {
        report.checks.push(CheckResult {
            name: "sample_table".into(),
            status: Status::Skipped,
            max_deviation: None,
            tolerance: 0.0,
            samples: r.samples.len(),
            detail: Some(format!("more than {SAMPLE_CSV_LIMIT} samples, admissibility.csv not written")),
        });
    }
    if let Some(gap) = r.route_gap {
        report.checks.push(CheckResult {
            name: "route_agreement".into(),
            status: if r.routes_agree { Status::Pass } else { Status::Fail },
            max_deviation: Some(gap),
            tolerance: crate::admissibility::ROUTE_TOL,
            samples: r.samples.len(),
            detail: None,
        });
    }
    report.admissibility = Some((&r).into());
    report.timing_ms.insert("total".into(), ms(t0));
    report.finish();
    Ok(report)
}

/// `reconstruct`: admissibility, reconstruction, round trip and an
/// optional mesh.
pub fn run_reconstruct(cfg: &RunConfig, ov: &Overrides, out: &Path) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let u = cfg.require_factor()?;
    let x0 = cfg.base_point()?;
    let dirs = directions(cfg, || default_grid(cfg.n))?;
    let mut report = Report::new("reconstruct", cfg);
    let (fam, adm) = match reconstruct_surface(&u, &x0, &dirs) {
        Ok(v) => v,
        Err(GeomError::NotAdmissible { .. }) => {
            let r = admissibility_test(&u, &dirs)?;
            report.admissibility = Some((&r).into());
            report.timing_ms.insert("total".into(), ms(t0));
            report.finish();
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };
    report.admissibility = Some((&adm).into());
    let analytic = fam.sphere_data().is_some();
    let check_dirs = low_discrepancy(cfg.n, ROUNDTRIP_SAMPLES.min(dirs.len()));
    let tol = tolerance_for(cfg, ov.tol, "roundtrip", !analytic);
    let dev = roundtrip_deviation(&fam, &u, &check_dirs);
    report.checks.push(finish_check(
        "roundtrip",
        tol,
        dev.map(|d| {
            CheckRun::Done(Outcome {
                deviation: d,
                samples: check_dirs.len(),
                detail: Some(if analytic { "analytic sphere" } else { "finite-difference envelope" }.into()),
            })
        }),
    ));
    let classes: Result<Vec<Convexity>, GeomError> = check_dirs
        .par_iter()
        .map(|s| Ok(classify_convexity(&forms_at(&fam.jet(&Site::on_sphere(s)?)?)?)))
        .collect();
    let want_convex = adm.is_c_admissible();
    report.checks.push(match classes {
        Ok(cs) => {
            let bad = cs
                .iter()
                .filter(|&&c| {
                    if want_convex {
                        c != Convexity::Convex
                    } else {
                        !matches!(c, Convexity::Convex | Convexity::StrictlyHConvex)
                    }
                })
                .count();
            CheckResult {
                name: "convexity".into(),
                status: if bad == 0 { Status::Pass } else { Status::Fail },
                max_deviation: Some(bad as f64),
                tolerance: 0.0,
                samples: cs.len(),
                detail: Some(if want_convex { "expect convex" } else { "expect strictly H-convex" }.into()),
            }
        }
        Err(e) => finish_check("convexity", 0.0, Err(e)),
    });
    if let Some(mesh) = &cfg.mesh {
        report.mesh = Some(export_family(&fam, mesh, out)?);
    }
    report.timing_ms.insert("total".into(), ms(t0));
    report.finish();
    Ok(report)
}

/// `export`: OFF mesh of the configured surface (n = 3).
pub fn run_export(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let t0 = Instant::now();
    let family = cfg.family()?;
    let mesh = cfg.mesh.clone().unwrap_or(MeshSpec {
        model: default_model(),
        rows: default_rows(),
        cols: default_cols(),
        file: default_mesh_file(),
    });
    let mut report = Report::new("export", cfg);
    report.mesh = Some(export_family(&family, &mesh, out)?);
    report.timing_ms.insert("total".into(), ms(t0));
    report.finish();
    Ok(report)
}

fn export_family(family: &SurfaceFamily, mesh: &MeshSpec, out: &Path) -> Result<MeshInfo, CliError> {
    if family.n() != 3 {
        return Err(CliError::Config("mesh export needs n = 3".into()));
    }
    let sites: Vec<Site> = if family.is_spherical() {
        lat_long(mesh.rows, mesh.cols)
            .iter()
            .map(Site::on_sphere)
            .collect::<Result<_, _>>()?
    } else {
        let mut v = Vec::with_capacity(mesh.rows * mesh.cols);
        for i in 0..mesh.rows {
            for j in 0..mesh.cols {
                let a = -1.0 + 2.0 * (i as f64 + 0.5) / mesh.rows as f64;
                let b = -1.0 + 2.0 * (j as f64 + 0.5) / mesh.cols as f64;
                v.push(Site::flat(DVector::from_vec(vec![a, b])));
            }
        }
        v
    };
    let points: Vec<HPoint> = sites
        .par_iter()
        .map(|s| Ok(family.jet(s)?.x))
        .collect::<Result<_, GeomError>>()?;
    fs::create_dir_all(out).map_err(GeomError::from)?;
    let path = out.join(&mesh.file);
    let grid = MeshGrid {
        rows: mesh.rows,
        cols: mesh.cols,
        closed: family.is_spherical(),
    };
    let faces = export_mesh(&points, grid, &path, mesh.model)?;
    Ok(MeshInfo {
        path: mesh.file.clone(),
        model: mesh.model,
        vertices: points.len(),
        faces,
    })
}

/// Row-major sample grid; `closed` grids wrap in the column direction and
/// get polygonal caps on the first and last rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeshGrid {
    pub rows: usize,
    pub cols: usize,
    pub closed: bool,
}

/// Writes an ASCII OFF mesh of `points` in the chosen ball model and
/// returns the face count.
pub fn export_mesh(points: &[HPoint], grid: MeshGrid, path: &Path, model: BallModel) -> Result<usize, GeomError> {
    if points.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if points.len() != grid.rows * grid.cols {
        return Err(GeomError::InvalidParameter(format!(
            "{} points do not fill a {}x{} grid",
            points.len(),
            grid.rows,
            grid.cols
        )));
    }
    let idx = |i: usize, j: usize| i * grid.cols + j;
    let mut faces: Vec<Vec<usize>> = Vec::new();
    let jmax = if grid.closed { grid.cols } else { grid.cols.saturating_sub(1) };
    for i in 0..grid.rows.saturating_sub(1) {
        for j in 0..jmax {
            let jn = (j + 1) % grid.cols;
            faces.push(vec![idx(i, j), idx(i + 1, j), idx(i + 1, jn)]);
            faces.push(vec![idx(i, j), idx(i + 1, jn), idx(i, jn)]);
        }
    }
    if grid.closed && grid.cols >= 3 {
        faces.push((0..grid.cols).rev().map(|j| idx(0, j)).collect());
        faces.push((0..grid.cols).map(|j| idx(grid.rows - 1, j)).collect());
    }
    let mut s = String::new();
    s.push_str("OFF\n");
    s.push_str(&format!("{} {} 0\n", points.len(), faces.len()));
    for p in points {
        let b = to_ball(p, model);
        let coords: Vec<String> = b.iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&coords.join(" "));
        s.push('\n');
    }
    for f in &faces {
        s.push_str(&f.len().to_string());
        for v in f {
            s.push_str(&format!(" {v}"));
        }
        s.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(s.as_bytes())?;
    Ok(faces.len())
}

#[derive(Debug, Parser)]
#[command(name = "horodual", version, about = "Hypersurfaces of H^n and their duals in the space of horospheres")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Run identity checks on a surface or a reconstructed factor.
    Verify(CommonArgs),
    /// Write the dual samples of a surface.
    Dualize(CommonArgs),
    /// H-/C-admissibility of a conformal factor.
    Admissible(CommonArgs),
    /// Reconstruct the surface of a conformal factor.
    Reconstruct(CommonArgs),
    /// Export an OFF mesh of a surface.
    Export(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "horodual-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
}

fn load(args: &CommonArgs) -> Result<(RunConfig, Overrides), CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    let ov = Overrides {
        seed: args.seed,
        tol: args.tol,
        grid: args.grid,
    };
    ov.apply(&mut cfg)?;
    Ok((cfg, ov))
}

/// Runs one verb; returns the report, or the error and its exit code.
pub fn execute(verb: &Verb) -> Result<Report, CliError> {
    let (args, name) = match verb {
        Verb::Verify(a) => (a, "verify"),
        Verb::Dualize(a) => (a, "dualize"),
        Verb::Admissible(a) => (a, "admissible"),
        Verb::Reconstruct(a) => (a, "reconstruct"),
        Verb::Export(a) => (a, "export"),
    };
    let (cfg, ov) = load(args)?;
    let report = match name {
        "verify" => run_verify(&cfg, &ov)?,
        "dualize" => run_dualize(&cfg, &args.out)?,
        "admissible" => run_admissible(&cfg, &args.out)?,
        "reconstruct" => run_reconstruct(&cfg, &ov, &args.out)?,
        _ => run_export(&cfg, &args.out)?,
    };
    report.write(&args.out)?;
    Ok(report)
}

/// Entry point of the binary: parses `args`, prints a summary and returns
/// the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.verb) {
        Ok(report) => {
            for c in &report.checks {
                let dev = c.max_deviation.map_or("-".to_string(), |d| format!("{d:.3e}"));
                println!(
                    "{:<22} {:<7} max_dev {:<10} tol {:.1e}{}",
                    c.name,
                    serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    dev,
                    c.tolerance,
                    c.detail.as_ref().map_or(String::new(), |d| format!("  ({d})"))
                );
            }
            if let Some(a) = &report.admissibility {
                println!("{}", a.message);
                if !matches!(a.class, AdmissibilityClass::HAdmissible | AdmissibilityClass::CAdmissible) {
                    println!("worst sample direction: {:?}", a.worst_direction);
                }
            }
            if let Some(m) = &report.mesh {
                println!("mesh: {} ({} vertices, {} faces)", m.path, m.vertices, m.faces);
            }
            println!(
                "overall: {}",
                if report.status == Status::Pass { "pass" } else { "fail" }
            );
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> RunConfig {
        RunConfig::from_json(json).unwrap()
    }

    #[test]
    fn config_validation() {
        let ok = cfg(r#"{"schema": "horodual.run/1", "n": 3, "surface": {"family": "geodesic_sphere", "radius": 1.0}}"#);
        assert_eq!(ok.check_list().len(), CHECKS.len());
        for bad in [
            r#"{"schema": "other", "n": 3}"#,
            r#"{"schema": "horodual.run/1", "n": 6}"#,
            r#"{"schema": "horodual.run/1", "n": 3, "checks": ["nope"]}"#,
            r#"{"schema": "horodual.run/1", "n": 3, "tolerances": {"dual_metric": -1}}"#,
            r#"{"schema": "horodual.run/1", "n": 3, "colour": 1}"#,
        ] {
            assert_eq!(RunConfig::from_json(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
        let c = cfg(r#"{"schema": "horodual.run/1", "n": 3, "checks": ["cone_embed", "dual_metric", "cone_embed"]}"#);
        assert_eq!(c.check_list(), vec!["dual_metric", "cone_embed"]);
    }

    #[test]
    fn isometries_are_valid() {
        for n in 3..=5 {
            let isos = seeded_isometries(n, 7).unwrap();
            assert_eq!(isos.len(), 5);
            for (_, g) in &isos {
                assert!(g.defect() < 1e-12);
            }
            assert!(isos[4].1.determinant() < 0.0 && isos[3].1.determinant() > 0.0);
        }
    }

    #[test]
    fn worst_propagates_nan() {
        assert!(worst([1.0, f64::NAN, 0.5]).is_nan());
        assert_eq!(worst([1.0, 3.0]), 3.0);
    }
}
