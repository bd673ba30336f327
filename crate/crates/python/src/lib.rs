//! Python bindings: expressions, grids, densities and the solver pipelines.
//!
//! Invalid input raises `ValueError`; numerical failures raise
//! `congeo.SolverError`. Long-running calls release the GIL.

use congeo_core::density::Density;
use congeo_core::dynamics::{
    certify_stationarity, evolve_fp, langevin_sample, max_stable_dt, CertificateTolerances, Drift,
    DynamicsError, FPConfig, LangevinConfig,
};
use congeo_core::expr::Expr;
use congeo_core::geometry::{trace_level_set, GeometryError, LevelSetOptions};
use congeo_core::grid::{Axis, GridSpec};
use congeo_core::maxent::{self, ConstraintSet, MaxentError};
use congeo_core::transport::{
    build_density_by_transport, parallel_transport, ConnectionSource, DensityOptions, Polyline,
    Quadrature, TransportError,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    congeo,
    SolverError,
    PyRuntimeError,
    "A numerical routine failed to produce a result."
);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn solver_err(e: impl std::fmt::Display) -> PyErr {
    SolverError::new_err(e.to_string())
}

fn maxent_err(e: MaxentError) -> PyErr {
    match e {
        MaxentError::DimensionMismatch { .. }
        | MaxentError::MissingTarget { .. }
        | MaxentError::Grid(_) => value_err(e),
        _ => solver_err(e),
    }
}

fn geometry_err(e: GeometryError) -> PyErr {
    match e {
        GeometryError::DimensionMismatch { .. }
        | GeometryError::NotPlanar(_)
        | GeometryError::InvalidParameter(_)
        | GeometryError::Grid(_) => value_err(e),
        _ => solver_err(e),
    }
}

fn transport_err(e: TransportError) -> PyErr {
    match e {
        TransportError::DimensionMismatch { .. } | TransportError::InvalidPath(_) => value_err(e),
        _ => solver_err(e),
    }
}

fn dynamics_err(e: DynamicsError) -> PyErr {
    match e {
        DynamicsError::Stability { .. }
        | DynamicsError::DriftStability { .. }
        | DynamicsError::InvalidParameter(_)
        | DynamicsError::DimensionMismatch { .. }
        | DynamicsError::Grid(_) => value_err(e),
        _ => solver_err(e),
    }
}

/// Symbolic expression in the variables `x1..xn`.
#[pyclass(name = "Expr", module = "congeo", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyExpr {
    inner: Expr,
}

#[pymethods]
impl PyExpr {
    #[new]
    fn new(source: &str, dimension: usize) -> PyResult<Self> {
        Expr::parse(source, dimension)
            .map(|inner| PyExpr { inner })
            .map_err(value_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn evaluate(&self, point: Vec<f64>) -> PyResult<f64> {
        if point.len() != self.inner.dimension() {
            return Err(value_err(format!(
                "expected {} coordinates, got {}",
                self.inner.dimension(),
                point.len()
            )));
        }
        self.inner.evaluate(&point).map_err(value_err)
    }

    /// Symbolic derivative along the zero-based `axis`.
    fn differentiate(&self, axis: usize) -> PyResult<PyExpr> {
        if axis >= self.inner.dimension() {
            return Err(PyIndexError::new_err(format!("axis {axis} out of range")));
        }
        Ok(PyExpr {
            inner: self.inner.differentiate(axis),
        })
    }

    fn gradient(&self) -> Vec<PyExpr> {
        self.inner
            .gradient()
            .into_iter()
            .map(|inner| PyExpr { inner })
            .collect()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Expr({:?}, {})",
            self.inner.to_string(),
            self.inner.dimension()
        )
    }
}

/// Tensor-product grid over an axis-aligned box.
#[pyclass(name = "Grid", module = "congeo", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: GridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> PyResult<Self> {
        if lower.len() != upper.len() || lower.len() != nodes.len() {
            return Err(value_err(
                "lower, upper and nodes must have the same length",
            ));
        }
        let axes = lower
            .into_iter()
            .zip(upper)
            .zip(nodes)
            .map(|((lower, upper), nodes)| Axis {
                lower,
                upper,
                nodes,
            });
        GridSpec::new(axes.collect())
            .map(|inner| PyGrid { inner })
            .map_err(value_err)
    }

    /// `[lower, upper]^dimension` with `nodes` points per axis.
    #[staticmethod]
    fn cube(dimension: usize, lower: f64, upper: f64, nodes: usize) -> PyResult<Self> {
        GridSpec::cube(dimension, lower, upper, nodes)
            .map(|inner| PyGrid { inner })
            .map_err(value_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn spacings(&self) -> Vec<f64> {
        self.inner.spacings()
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.inner.center()
    }

    /// Node coordinates in row-major order (last axis fastest).
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let axes: Vec<String> = self
            .inner
            .axes()
            .iter()
            .map(|a| format!("[{}, {}]x{}", a.lower, a.upper, a.nodes))
            .collect();
        format!("Grid({})", axes.join(" * "))
    }
}

/// Normalized density on a grid.
#[pyclass(name = "Density", module = "congeo", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensity {
    inner: Density,
}

#[pymethods]
impl PyDensity {
    /// Nodal values in row-major order.
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn z(&self) -> f64 {
        self.inner.z()
    }

    #[getter]
    fn log_z(&self) -> f64 {
        self.inner.log_z
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambda.clone()
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.sidecar_json()["provenance"]
            .as_str()
            .unwrap_or_default()
            .to_owned()
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid {
            inner: self.inner.grid().clone(),
        }
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn max_relative_error(&self, reference: &PyDensity) -> PyResult<f64> {
        same_grid(&self.inner, &reference.inner)?;
        Ok(self.inner.max_relative_error(&reference.inner))
    }

    fn l1_distance(&self, other: &PyDensity) -> PyResult<f64> {
        self.inner
            .field
            .l1_distance(&other.inner.field)
            .map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.values().len()
    }

    fn __repr__(&self) -> String {
        format!("Density({}, Z={:e})", self.provenance(), self.inner.z())
    }
}

fn same_grid(a: &Density, b: &Density) -> PyResult<()> {
    if a.grid() != b.grid() {
        return Err(value_err("densities live on different grids"));
    }
    Ok(())
}

fn parse_quadrature(name: &str) -> PyResult<Quadrature> {
    match name {
        "gauss4" => Ok(Quadrature::Gauss4),
        "trapezoid" => Ok(Quadrature::Trapezoid),
        other => Err(value_err(format!(
            "unknown quadrature {other:?}; expected gauss4 or trapezoid"
        ))),
    }
}

fn parse_all(sources: &[String], dimension: usize) -> PyResult<Vec<Expr>> {
    sources
        .iter()
        .map(|s| Expr::parse(s, dimension).map_err(value_err))
        .collect()
}

/// Density `∝ exp(-λ (J(x) - J(basepoint)))` built by transport from the
/// basepoint (default: box center).
#[pyfunction]
#[pyo3(signature = (potential, grid, lam = 1.0, basepoint = None, segments = 8))]
fn transport_density(
    py: Python<'_>,
    potential: &PyExpr,
    grid: &PyGrid,
    lam: f64,
    basepoint: Option<Vec<f64>>,
    segments: usize,
) -> PyResult<PyDensity> {
    let source = ConnectionSource::exact(potential.inner.clone(), lam);
    let base = basepoint.unwrap_or_else(|| grid.inner.center());
    let opts = DensityOptions {
        segments,
        ..DensityOptions::default()
    };
    py.detach(|| build_density_by_transport(&source, &grid.inner, &base, &opts))
        .map(|inner| PyDensity { inner })
        .map_err(transport_err)
}

/// Transport factor of `exp(-λ ∫ dJ)` along a polyline.
#[pyfunction]
#[pyo3(signature = (potential, vertices, lam = 1.0, closed = false, quadrature = "gauss4"))]
fn transport<'py>(
    py: Python<'py>,
    potential: &PyExpr,
    vertices: Vec<Vec<f64>>,
    lam: f64,
    closed: bool,
    quadrature: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let path = if closed {
        Polyline::closed(vertices)
    } else {
        Polyline::open(vertices)
    }
    .map_err(value_err)?;
    let source = ConnectionSource::exact(potential.inner.clone(), lam);
    let r =
        parallel_transport(&source, &path, parse_quadrature(quadrature)?).map_err(transport_err)?;
    let d = PyDict::new(py);
    d.set_item("integral", r.integral)?;
    d.set_item("factor", r.factor)?;
    d.set_item("partial_sums", r.partial_sums)?;
    Ok(d)
}

fn constraint_set(
    dimension: usize,
    items: &[(String, f64)],
    targets: bool,
) -> PyResult<ConstraintSet> {
    let parsed: Vec<(&str, f64, Option<f64>)> = items
        .iter()
        .map(|(e, v)| {
            if targets {
                (e.as_str(), 0.0, Some(*v))
            } else {
                (e.as_str(), *v, None)
            }
        })
        .collect();
    ConstraintSet::parse(dimension, &parsed).map_err(value_err)
}

/// `exp(-Σ λ_k J_k) / Z` for `(expression, λ)` pairs.
#[pyfunction]
fn el_density(constraints: Vec<(String, f64)>, grid: &PyGrid) -> PyResult<PyDensity> {
    let cs = constraint_set(grid.inner.dimension(), &constraints, false)?;
    maxent::el_density(&cs, &grid.inner)
        .map(|inner| PyDensity { inner })
        .map_err(maxent_err)
}

/// Fits multipliers to `(expression, target)` pairs. Returns the report and
/// the fitted density.
#[pyfunction]
#[pyo3(signature = (constraints, grid, tol = 1e-10, max_iter = 100))]
fn fit_multipliers<'py>(
    py: Python<'py>,
    constraints: Vec<(String, f64)>,
    grid: &PyGrid,
    tol: f64,
    max_iter: usize,
) -> PyResult<(Bound<'py, PyDict>, PyDensity)> {
    let cs = constraint_set(grid.inner.dimension(), &constraints, true)?;
    let (report, density) = py
        .detach(|| maxent::fit_multipliers(&cs, &grid.inner, tol, max_iter))
        .map_err(maxent_err)?;
    let d = PyDict::new(py);
    d.set_item("lambda", report.lambda)?;
    d.set_item("moments", report.moments)?;
    d.set_item("residual", report.residual)?;
    d.set_item("iterations", report.iterations)?;
    d.set_item("converged", report.converged)?;
    d.set_item("residual_trajectory", report.residual_trajectory)?;
    Ok((d, PyDensity { inner: density }))
}

/// Compares Euler–Lagrange residuals and the argmax over a candidate family
/// before and after the gauge `exp(-λ' J')`.
#[pyfunction]
#[pyo3(signature = (constraints, grid, gauge, gauge_lambda, candidates = 5))]
fn gauge_invariance<'py>(
    py: Python<'py>,
    constraints: Vec<(String, f64)>,
    grid: &PyGrid,
    gauge: &str,
    gauge_lambda: f64,
    candidates: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let n = grid.inner.dimension();
    let cs = constraint_set(n, &constraints, false)?;
    let j_prime = Expr::parse(gauge, n).map_err(value_err)?;
    let p = maxent::el_density(&cs, &grid.inner).map_err(maxent_err)?;
    let r = maxent::gauge_invariance_check(&p, &cs, &j_prime, gauge_lambda, candidates)
        .map_err(maxent_err)?;
    let d = PyDict::new(py);
    d.set_item("residual_before", r.residual_before)?;
    d.set_item("residual_after", r.residual_after)?;
    d.set_item("winner_before", r.winner_before)?;
    d.set_item("winner_after", r.winner_after)?;
    d.set_item("invariant", r.invariant)?;
    Ok(d)
}

/// Stationarity certificate for a drift given componentwise.
#[pyfunction]
#[pyo3(signature = (drift, grid, lam = 1.0, diffusion = 1.0, seed = 0, curvature_tol = 1e-8, path_tol = 1e-8, fp_tol = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn certify<'py>(
    py: Python<'py>,
    drift: Vec<String>,
    grid: &PyGrid,
    lam: f64,
    diffusion: f64,
    seed: u64,
    curvature_tol: f64,
    path_tol: f64,
    fp_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let b = parse_all(&drift, grid.inner.dimension())?;
    let tol = CertificateTolerances {
        curvature: curvature_tol,
        path: path_tol,
        fp: fp_tol,
    };
    let c = py
        .detach(|| certify_stationarity(&b, lam, diffusion, &grid.inner, tol, seed))
        .map_err(dynamics_err)?;
    let d = PyDict::new(py);
    d.set_item("solvable", c.is_solvable())?;
    d.set_item("curvature_max", c.curvature_max)?;
    d.set_item("path_spread", c.path_spread)?;
    d.set_item("fp_residual", c.fp_residual)?;
    Ok(d)
}

/// Connected components of `{J = level}` as `(closed, vertices)` pairs.
#[pyfunction]
#[pyo3(signature = (potential, grid, level, step = 1e-3, max_steps = 1_000_000))]
fn level_set(
    py: Python<'_>,
    potential: &PyExpr,
    grid: &PyGrid,
    level: f64,
    step: f64,
    max_steps: usize,
) -> PyResult<Vec<(bool, Vec<Vec<f64>>)>> {
    let opts = LevelSetOptions { step, max_steps };
    let curves = py
        .detach(|| trace_level_set(&potential.inner, &grid.inner, level, &opts))
        .map_err(geometry_err)?;
    Ok(curves
        .into_iter()
        .map(|c| (c.is_closed(), c.vertices().to_vec()))
        .collect())
}

/// Evolves the Fokker–Planck equation with drift `-λ∇J` from `initial`
/// (default: uniform). `dt` defaults to half the largest stable step. Returns
/// snapshot summaries and the final density.
#[pyfunction]
#[pyo3(signature = (potential, grid, t_final, lam = 1.0, diffusion = 1.0, dt = None, sample_every = 100, initial = None))]
#[allow(clippy::too_many_arguments)]
fn evolve<'py>(
    py: Python<'py>,
    potential: &PyExpr,
    grid: &PyGrid,
    t_final: f64,
    lam: f64,
    diffusion: f64,
    dt: Option<f64>,
    sample_every: usize,
    initial: Option<&PyDensity>,
) -> PyResult<(Vec<Bound<'py, PyDict>>, PyDensity)> {
    let p0 = match initial {
        Some(p) => {
            if p.inner.grid() != &grid.inner {
                return Err(value_err("initial density lives on a different grid"));
            }
            p.inner.clone()
        }
        None => Density::uniform(grid.inner.clone()),
    };
    let drift = Drift::gradient(potential.inner.clone(), lam);
    let dt = match dt {
        Some(dt) => dt,
        None => 0.5 * max_stable_dt(&drift, diffusion, &grid.inner).map_err(dynamics_err)?,
    };
    let cfg = FPConfig {
        drift,
        diffusion,
        dt,
        t_final,
        sample_every,
    };
    let mut traj = py.detach(|| evolve_fp(&p0, &cfg)).map_err(dynamics_err)?;
    let last = traj
        .snapshots
        .pop()
        .expect("trajectory keeps the final state");
    let summary = |s: &congeo_core::dynamics::Snapshot| -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("step", s.step)?;
        d.set_item("time", s.time)?;
        d.set_item("mass", s.mass)?;
        d.set_item("min", s.min)?;
        d.set_item("free_energy", s.free_energy)?;
        Ok(d)
    };
    let mut out = traj
        .snapshots
        .iter()
        .map(summary)
        .collect::<PyResult<Vec<_>>>()?;
    out.push(summary(&last)?);
    Ok((
        out,
        PyDensity {
            inner: last.density,
        },
    ))
}

/// Overdamped Langevin sampler for `dX = -λ∇J dt + √(2D) dW`. Returns the
/// final positions and the histogram density on `grid`.
#[pyfunction]
#[pyo3(signature = (potential, grid, particles, dt, t_final, seed = 0, lam = 1.0, diffusion = 1.0))]
#[allow(clippy::too_many_arguments)]
fn sample(
    py: Python<'_>,
    potential: &PyExpr,
    grid: &PyGrid,
    particles: usize,
    dt: f64,
    t_final: f64,
    seed: u64,
    lam: f64,
    diffusion: f64,
) -> PyResult<(Vec<Vec<f64>>, PyDensity)> {
    let cfg = LangevinConfig {
        lambda: lam,
        diffusion,
        particles,
        dt,
        t_final,
        seed,
    };
    let r = py
        .detach(|| langevin_sample(&potential.inner, &cfg, &grid.inner))
        .map_err(dynamics_err)?;
    let positions = r
        .positions
        .chunks(r.dimension)
        .map(<[f64]>::to_vec)
        .collect();
    Ok((positions, PyDensity { inner: r.histogram }))
}

#[pymodule]
fn congeo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_class::<PyExpr>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyDensity>()?;
    m.add_function(wrap_pyfunction!(transport_density, m)?)?;
    m.add_function(wrap_pyfunction!(transport, m)?)?;
    m.add_function(wrap_pyfunction!(el_density, m)?)?;
    m.add_function(wrap_pyfunction!(fit_multipliers, m)?)?;
    m.add_function(wrap_pyfunction!(gauge_invariance, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(level_set, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    Ok(())
}
