//! Parallel transport along the connection `A = λ dJ` (or any one-form
//! given componentwise).
//!
//! Transport of a fibre value along a path `φ` multiplies it by
//! `exp(-∫_φ A)`. For an exact form the integral is `λ(J(end) - J(start))`
//! regardless of the path, which is what the density construction and the
//! path-independence check lean on.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::density::{normalize_exp, Density, Provenance};
use crate::expr::{EvalError, Expr};
use crate::grid::{GridError, GridSpec};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TransportError {
    #[error("evaluation failed on segment {segment} at {point:?}: {source}")]
    Eval {
        segment: usize,
        point: Vec<f64>,
        source: EvalError,
    },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("partition constant is not a positive finite number")]
    Normalization,
    #[error("need at least {0} paths")]
    TooFewPaths(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// An ordered list of points; closed polylines have an implicit segment
/// from the last vertex back to the first.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    vertices: Vec<Vec<f64>>,
    closed: bool,
}

impl Polyline {
    fn build(vertices: Vec<Vec<f64>>, closed: bool) -> Result<Polyline, TransportError> {
        if vertices.len() < 2 {
            return Err(TransportError::InvalidPath(
                "need at least two vertices".into(),
            ));
        }
        let n = vertices[0].len();
        if n == 0 {
            return Err(TransportError::InvalidPath("empty coordinates".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if v.len() != n {
                return Err(TransportError::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TransportError::InvalidPath(format!(
                    "vertex {i} is not finite"
                )));
            }
        }
        let poly = Polyline { vertices, closed };
        if let Some(i) = poly.segments().position(|(a, b)| a == b) {
            return Err(TransportError::InvalidPath(format!(
                "segment {i} has zero length"
            )));
        }
        Ok(poly)
    }

    pub fn open(vertices: Vec<Vec<f64>>) -> Result<Polyline, TransportError> {
        Polyline::build(vertices, false)
    }

    pub fn closed(vertices: Vec<Vec<f64>>) -> Result<Polyline, TransportError> {
        Polyline::build(vertices, true)
    }

    pub fn straight(start: &[f64], end: &[f64]) -> Result<Polyline, TransportError> {
        Polyline::open(vec![start.to_vec(), end.to_vec()])
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn dimension(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn start(&self) -> &[f64] {
        &self.vertices[0]
    }

    /// Final point of the traversal; the start again for closed loops.
    pub fn end(&self) -> &[f64] {
        if self.closed {
            &self.vertices[0]
        } else {
            self.vertices.last().unwrap()
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        let n = self.vertices.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| {
            (
                self.vertices[i].as_slice(),
                self.vertices[(i + 1) % n].as_slice(),
            )
        })
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.vertices.len()
        } else {
            self.vertices.len() - 1
        }
    }

    pub fn length(&self) -> f64 {
        self.segments()
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }

    /// Open path traversing `self` then `other`; `other` must start where
    /// `self` ends.
    pub fn concat(&self, other: &Polyline) -> Result<Polyline, TransportError> {
        if self.end() != other.start() {
            return Err(TransportError::InvalidPath("paths do not meet".into()));
        }
        let mut vertices = self.vertices.clone();
        if self.closed {
            vertices.push(self.vertices[0].clone());
        }
        vertices.extend(other.vertices.iter().skip(1).cloned());
        if other.closed {
            vertices.push(other.vertices[0].clone());
        }
        Polyline::open(vertices)
    }

    pub fn reversed(&self) -> Polyline {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        if self.closed {
            vertices.rotate_right(1);
        }
        Polyline {
            vertices,
            closed: self.closed,
        }
    }

    /// Splits every segment into `pieces` equal parts.
    pub fn subdivided(&self, pieces: usize) -> Polyline {
        let pieces = pieces.max(1);
        let mut vertices = Vec::with_capacity(self.segment_count() * pieces + 1);
        for (a, b) in self.segments() {
            for k in 0..pieces {
                let t = k as f64 / pieces as f64;
                vertices.push(a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect());
            }
        }
        if !self.closed {
            vertices.push(self.vertices.last().unwrap().clone());
        }
        Polyline {
            vertices,
            closed: self.closed,
        }
    }
}

/// Where the connection one-form comes from.
#[derive(Clone, Debug)]
pub enum ConnectionSource {
    /// `A = λ dJ`, differentiated symbolically.
    Exact {
        potential: Expr,
        lambda: f64,
        gradient: Vec<Expr>,
    },
    /// `A = λ Σ c_i dx^i` with arbitrary (possibly non-closed) components.
    Components { components: Vec<Expr>, lambda: f64 },
}

impl ConnectionSource {
    pub fn exact(potential: Expr, lambda: f64) -> ConnectionSource {
        let gradient = potential.gradient();
        ConnectionSource::Exact {
            potential,
            lambda,
            gradient,
        }
    }

    pub fn components(
        components: Vec<Expr>,
        lambda: f64,
    ) -> Result<ConnectionSource, TransportError> {
        let n = components.len();
        if n == 0 {
            return Err(TransportError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if let Some(c) = components.iter().find(|c| c.dimension() != n) {
            return Err(TransportError::DimensionMismatch {
                expected: n,
                got: c.dimension(),
            });
        }
        Ok(ConnectionSource::Components { components, lambda })
    }

    pub fn dimension(&self) -> usize {
        match self {
            ConnectionSource::Exact { potential, .. } => potential.dimension(),
            ConnectionSource::Components { components, .. } => components.len(),
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            ConnectionSource::Exact { lambda, .. }
            | ConnectionSource::Components { lambda, .. } => *lambda,
        }
    }

    /// Unscaled component expressions (`∂_i J` or `c_i`).
    pub fn component_exprs(&self) -> &[Expr] {
        match self {
            ConnectionSource::Exact { gradient, .. } => gradient,
            ConnectionSource::Components { components, .. } => components,
        }
    }

    /// The scaled one-form `A` at `point`.
    pub fn eval_into(&self, point: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let lambda = self.lambda();
        for (o, c) in out.iter_mut().zip(self.component_exprs()) {
            *o = lambda * c.evaluate(point)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Trapezoid,
    #[default]
    Gauss4,
}

// Gauss–Legendre 4-point rule mapped to [0, 1].
const G4_X: [f64; 4] = [
    0.5 - 0.5 * 0.861_136_311_594_052_6,
    0.5 - 0.5 * 0.339_981_043_584_856_3,
    0.5 + 0.5 * 0.339_981_043_584_856_3,
    0.5 + 0.5 * 0.861_136_311_594_052_6,
];
const G4_W: [f64; 4] = [
    0.5 * 0.347_854_845_137_453_9,
    0.5 * 0.652_145_154_862_546_1,
    0.5 * 0.652_145_154_862_546_1,
    0.5 * 0.347_854_845_137_453_9,
];

struct Scratch {
    point: Vec<f64>,
    form: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Scratch {
        Scratch {
            point: vec![0.0; n],
            form: vec![0.0; n],
        }
    }
}

/// `A(a + t(b - a)) · (b - a)`.
fn pulled_back(
    source: &ConnectionSource,
    a: &[f64],
    b: &[f64],
    t: f64,
    segment: usize,
    s: &mut Scratch,
) -> Result<f64, TransportError> {
    for k in 0..a.len() {
        s.point[k] = a[k] + t * (b[k] - a[k]);
    }
    source
        .eval_into(&s.point, &mut s.form)
        .map_err(|source| TransportError::Eval {
            segment,
            point: s.point.clone(),
            source,
        })?;
    Ok(s.form
        .iter()
        .zip(a.iter().zip(b))
        .map(|(f, (x, y))| f * (y - x))
        .sum())
}

fn segment_integral(
    source: &ConnectionSource,
    a: &[f64],
    b: &[f64],
    quad: Quadrature,
    segment: usize,
    s: &mut Scratch,
) -> Result<f64, TransportError> {
    match quad {
        Quadrature::Trapezoid => {
            let fa = pulled_back(source, a, b, 0.0, segment, s)?;
            let fb = pulled_back(source, a, b, 1.0, segment, s)?;
            Ok(0.5 * (fa + fb))
        }
        Quadrature::Gauss4 => {
            let mut acc = 0.0;
            for (x, w) in G4_X.iter().zip(G4_W) {
                acc += w * pulled_back(source, a, b, *x, segment, s)?;
            }
            Ok(acc)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineIntegral {
    pub total: f64,
    /// Running integral after each segment.
    pub partial_sums: Vec<f64>,
}

fn check_dim(source: &ConnectionSource, path: &Polyline) -> Result<(), TransportError> {
    if source.dimension() != path.dimension() {
        return Err(TransportError::DimensionMismatch {
            expected: source.dimension(),
            got: path.dimension(),
        });
    }
    Ok(())
}

/// Composite quadrature of `∫_path A`.
pub fn line_integral(
    source: &ConnectionSource,
    path: &Polyline,
    quad: Quadrature,
) -> Result<LineIntegral, TransportError> {
    check_dim(source, path)?;
    let mut s = Scratch::new(path.dimension());
    let mut total = 0.0;
    let mut partial_sums = Vec::with_capacity(path.segment_count());
    for (i, (a, b)) in path.segments().enumerate() {
        total += segment_integral(source, a, b, quad, i, &mut s)?;
        partial_sums.push(total);
    }
    Ok(LineIntegral {
        total,
        partial_sums,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportResult {
    pub integral: f64,
    /// `exp(-integral)`, strictly positive.
    pub factor: f64,
    pub partial_sums: Vec<f64>,
}

pub fn parallel_transport(
    source: &ConnectionSource,
    path: &Polyline,
    quad: Quadrature,
) -> Result<TransportResult, TransportError> {
    let li = line_integral(source, path, quad)?;
    Ok(TransportResult {
        integral: li.total,
        factor: (-li.total).exp(),
        partial_sums: li.partial_sums,
    })
}

/// Solves `s' = -A(φ(t))·φ'(t) s`, `s(0) = 1` with classical RK4 using
/// `substeps` steps per segment. Independent of the quadrature route.
pub fn transport_ode_rk4(
    source: &ConnectionSource,
    path: &Polyline,
    substeps: usize,
) -> Result<f64, TransportError> {
    check_dim(source, path)?;
    let substeps = substeps.max(1);
    let mut scratch = Scratch::new(path.dimension());
    let mut s = 1.0;
    let h = 1.0 / substeps as f64;
    for (seg, (a, b)) in path.segments().enumerate() {
        let mut rate = |t: f64| pulled_back(source, a, b, t, seg, &mut scratch).map(|v| -v);
        for k in 0..substeps {
            let t = k as f64 * h;
            let k1 = rate(t)? * s;
            let k2 = rate(t + 0.5 * h)? * (s + 0.5 * h * k1);
            let k3 = rate(t + 0.5 * h)? * (s + 0.5 * h * k2);
            let k4 = rate(t + h)? * (s + h * k3);
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSpread {
    pub factors: Vec<f64>,
    /// `(max - min) / min` over the transport factors.
    pub spread: f64,
}

/// Transport factors over several paths sharing endpoints.
pub fn transport_spread(
    source: &ConnectionSource,
    paths: &[Polyline],
    quad: Quadrature,
) -> Result<PathSpread, TransportError> {
    if paths.len() < 2 {
        return Err(TransportError::TooFewPaths(2));
    }
    let factors = paths
        .iter()
        .map(|p| parallel_transport(source, p, quad).map(|r| r.factor))
        .collect::<Result<Vec<_>, _>>()?;
    let min = factors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = factors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PathSpread {
        factors,
        spread: (max - min) / min,
    })
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `k` seeded random polylines inside the grid box from `start` to `end`.
/// The first is the straight segment; the rest carry 1 to 14 random
/// interior vertices (at most 16 vertices in total).
pub fn random_paths(
    grid: &GridSpec,
    start: &[f64],
    end: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<Polyline>, TransportError> {
    let n = grid.dimension();
    if start.len() != n || end.len() != n {
        return Err(TransportError::DimensionMismatch {
            expected: n,
            got: start.len().min(end.len()),
        });
    }
    if !grid.contains(start) || !grid.contains(end) {
        return Err(TransportError::InvalidPath(
            "endpoints must lie inside the box".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = vec![Polyline::straight(start, end)?];
    while paths.len() < k {
        let interior = 1 + (rng.next_u64() % 14) as usize;
        let mut vertices = vec![start.to_vec()];
        for _ in 0..interior {
            vertices.push(
                grid.axes()
                    .iter()
                    .map(|a| a.lower + uniform01(&mut rng) * (a.upper - a.lower))
                    .collect(),
            );
        }
        vertices.push(end.to_vec());
        paths.push(Polyline::open(vertices)?);
    }
    Ok(paths)
}

/// Spread of transport factors across `k` random paths; zero (up to
/// rounding) exactly when the connection is path independent.
pub fn path_independence_check(
    source: &ConnectionSource,
    grid: &GridSpec,
    start: &[f64],
    end: &[f64],
    k: usize,
    seed: u64,
) -> Result<PathSpread, TransportError> {
    if k < 2 {
        return Err(TransportError::TooFewPaths(2));
    }
    let paths = random_paths(grid, start, end, k, seed)?;
    transport_spread(source, &paths, Quadrature::Gauss4)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityOptions {
    pub quadrature: Quadrature,
    /// Subdivisions of each straight basepoint-to-node path.
    pub segments: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            quadrature: Quadrature::Gauss4,
            segments: 8,
        }
    }
}

/// Builds `p(x) ∝ exp(-∫_{b→x} A)` by transporting along straight paths
/// from `basepoint` to every node, then normalizes with the trapezoid rule.
pub fn build_density_by_transport(
    source: &ConnectionSource,
    grid: &GridSpec,
    basepoint: &[f64],
    opts: &DensityOptions,
) -> Result<Density, TransportError> {
    let n = grid.dimension();
    if source.dimension() != n {
        return Err(TransportError::DimensionMismatch {
            expected: n,
            got: source.dimension(),
        });
    }
    if basepoint.len() != n || !grid.contains(basepoint) {
        return Err(TransportError::InvalidPath(
            "basepoint must lie inside the box".into(),
        ));
    }
    let pieces = opts.segments.max(1);
    let mut s = Scratch::new(n);
    let mut node = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut integrals = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        grid.point_into(flat, &mut node);
        if node == basepoint {
            integrals.push(0.0);
            continue;
        }
        let mut total = 0.0;
        for k in 0..pieces {
            let t0 = k as f64 / pieces as f64;
            let t1 = (k + 1) as f64 / pieces as f64;
            for d in 0..n {
                let delta = node[d] - basepoint[d];
                a[d] = basepoint[d] + t0 * delta;
                b[d] = if k + 1 == pieces {
                    node[d]
                } else {
                    basepoint[d] + t1 * delta
                };
            }
            total += segment_integral(source, &a, &b, opts.quadrature, k, &mut s)?;
        }
        integrals.push(total);
    }
    let (values, log_z) = normalize_exp(grid, &integrals).ok_or(TransportError::Normalization)?;
    Ok(Density {
        field: crate::grid::ScalarField::new(grid.clone(), values)?,
        log_z,
        provenance: Provenance::TransportBuilt,
        lambda: vec![source.lambda()],
        basepoint: Some(basepoint.to_vec()),
    })
}
