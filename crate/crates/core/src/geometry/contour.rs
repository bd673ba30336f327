//! Level sets of a planar potential as integral curves of the kernel of dJ.
//!
//! Each curve is stepped along the unit rotated gradient `(-∂₂J, ∂₁J)/|∇J|`
//! with classical RK4 and then pulled back onto `J = c` by Newton steps
//! along the gradient. Curves that leave the box are clipped at the
//! boundary and traced in both directions from their seed.

use crate::expr::{Expr, Program};
use crate::grid::GridSpec;
use crate::transport::Polyline;

use super::GeometryError;

/// Gradients smaller than this abort tracing.
pub const CRITICAL_GRADIENT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSetOptions {
    /// Arc length between consecutive vertices.
    pub step: f64,
    /// Vertex budget per traced direction.
    pub max_steps: usize,
}

impl Default for LevelSetOptions {
    fn default() -> Self {
        LevelSetOptions {
            step: 1e-3,
            max_steps: 1_000_000,
        }
    }
}

struct Tracer {
    j: Program,
    dj: [Program; 2],
    level: f64,
    lower: [f64; 2],
    upper: [f64; 2],
}

enum Stop {
    Closed,
    Boundary,
    Budget,
}

impl Tracer {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.j.eval(&x) - self.level
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        [self.dj[0].eval(&x), self.dj[1].eval(&x)]
    }

    fn inside(&self, x: [f64; 2]) -> bool {
        (0..2).all(|k| x[k] >= self.lower[k] && x[k] <= self.upper[k])
    }

    fn checked_grad(&self, x: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let g = self.grad(x);
        let norm = g[0].hypot(g[1]);
        if !(norm >= CRITICAL_GRADIENT) {
            return Err(GeometryError::CriticalPoint {
                point: x.to_vec(),
                grad_norm: norm,
            });
        }
        Ok(g)
    }

    fn tangent(&self, x: [f64; 2], sign: f64) -> Result<[f64; 2], GeometryError> {
        let g = self.checked_grad(x)?;
        let norm = g[0].hypot(g[1]);
        Ok([-sign * g[1] / norm, sign * g[0] / norm])
    }

    /// Newton iteration onto `J = c` along the gradient direction.
    fn project(&self, mut x: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        for _ in 0..50 {
            let r = self.value(x);
            if r == 0.0 {
                break;
            }
            let g = self.checked_grad(x)?;
            let g2 = g[0] * g[0] + g[1] * g[1];
            let dx = [r * g[0] / g2, r * g[1] / g2];
            x = [x[0] - dx[0], x[1] - dx[1]];
            if dx[0].abs().max(dx[1].abs()) <= 1e-16 * (1.0 + x[0].abs().max(x[1].abs())) {
                break;
            }
        }
        Ok(x)
    }

    fn advance(&self, x: [f64; 2], h: f64, sign: f64) -> Result<[f64; 2], GeometryError> {
        let k1 = self.tangent(x, sign)?;
        let k2 = self.tangent([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]], sign)?;
        let k3 = self.tangent([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]], sign)?;
        let k4 = self.tangent([x[0] + h * k3[0], x[1] + h * k3[1]], sign)?;
        let y = [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        self.project(y)
    }

    fn trace(
        &self,
        seed: [f64; 2],
        sign: f64,
        opts: &LevelSetOptions,
    ) -> Result<(Vec<[f64; 2]>, Stop), GeometryError> {
        let step = opts.step;
        let mut pts = vec![seed];
        let mut left_start = false;
        for _ in 0..opts.max_steps {
            let x = *pts.last().unwrap();
            let y = self.advance(x, step, sign)?;
            if !self.inside(y) {
                // bisect the step length so the last vertex sits on the boundary
                let (mut lo, mut hi) = (0.0, step);
                let mut best = x;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let z = self.advance(x, mid, sign)?;
                    if self.inside(z) {
                        lo = mid;
                        best = z;
                    } else {
                        hi = mid;
                    }
                }
                if best != x {
                    pts.push(best);
                }
                return Ok((pts, Stop::Boundary));
            }
            self.checked_grad(y)?;
            let d = dist(y, seed);
            if left_start && d <= step {
                return Ok((pts, Stop::Closed));
            }
            if d > 2.0 * step {
                left_start = true;
            }
            pts.push(y);
        }
        Ok((pts, Stop::Budget))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Traces every connected component of `{J = level}` inside the grid box.
///
/// Seeds come from grid cells whose corner values bracket the level; a cell
/// already crossed by a traced curve is not reseeded.
pub fn trace_level_set(
    e: &Expr,
    grid: &GridSpec,
    level: f64,
    opts: &LevelSetOptions,
) -> Result<Vec<Polyline>, GeometryError> {
    if grid.dimension() != 2 {
        return Err(GeometryError::NotPlanar(grid.dimension()));
    }
    if e.dimension() != 2 {
        return Err(GeometryError::DimensionMismatch {
            expr: e.dimension(),
            grid: 2,
        });
    }
    if !(opts.step > 0.0) || !opts.step.is_finite() {
        return Err(GeometryError::InvalidParameter(format!(
            "step {}",
            opts.step
        )));
    }
    let axes = grid.axes();
    let tracer = Tracer {
        j: e.compile(),
        dj: [e.differentiate(0).compile(), e.differentiate(1).compile()],
        level,
        lower: [axes[0].lower, axes[1].lower],
        upper: [axes[0].upper, axes[1].upper],
    };
    let (nx, ny) = (axes[0].nodes, axes[1].nodes);
    let node_val = |i: usize, j: usize| tracer.value([axes[0].coord(i), axes[1].coord(j)]);
    let values: Vec<f64> = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .map(|(i, j)| node_val(i, j))
        .collect();
    let f = |i: usize, j: usize| values[i * ny + j];

    let (cx, cy) = (nx - 1, ny - 1);
    let mut visited = vec![false; cx * cy];
    let mut curves = Vec::new();
    let mut any_seed = false;

    for ci in 0..cx {
        for cj in 0..cy {
            let corners = [(ci, cj), (ci + 1, cj), (ci + 1, cj + 1), (ci, cj + 1)];
            let vals: Vec<f64> = corners.iter().map(|&(i, j)| f(i, j)).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo <= 0.0 && hi >= 0.0) {
                continue;
            }
            any_seed = true;
            if visited[ci * cy + cj] {
                continue;
            }
            let seed = seed_point(&corners, &vals, axes);
            let seed = tracer.project(seed)?;
            tracer.checked_grad(seed)?;
            if !tracer.inside(seed) {
                continue;
            }
            // cells touched only at a corner reseed curves already traced
            let tol = 1e-5 * axes[0].spacing().min(axes[1].spacing());
            if curves
                .iter()
                .any(|c: &Polyline| distance_to(c, seed) <= tol)
            {
                visited[ci * cy + cj] = true;
                continue;
            }
            let (fwd, stop) = tracer.trace(seed, 1.0, opts)?;
            let poly = match stop {
                Stop::Closed => Polyline::closed(fwd.iter().map(|p| p.to_vec()).collect()),
                Stop::Boundary | Stop::Budget => {
                    let (bwd, _) = tracer.trace(seed, -1.0, opts)?;
                    let pts: Vec<Vec<f64>> = bwd
                        .iter()
                        .rev()
                        .chain(fwd.iter().skip(1))
                        .map(|p| p.to_vec())
                        .collect();
                    Polyline::open(pts)
                }
            };
            let Ok(poly) = poly else { continue };
            mark_visited(&poly, axes, cx, cy, &mut visited);
            visited[ci * cy + cj] = true;
            curves.push(poly);
        }
    }
    if !any_seed {
        return Err(GeometryError::SeedNotFound { level });
    }
    Ok(curves)
}

fn distance_to(poly: &Polyline, x: [f64; 2]) -> f64 {
    poly.segments()
        .map(|(a, b)| {
            let d = [b[0] - a[0], b[1] - a[1]];
            let t = (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]))
                .clamp(0.0, 1.0);
            dist(x, [a[0] + t * d[0], a[1] + t * d[1]])
        })
        .fold(f64::INFINITY, f64::min)
}

fn seed_point(corners: &[(usize, usize); 4], vals: &[f64], axes: &[crate::grid::Axis]) -> [f64; 2] {
    let at = |(i, j): (usize, usize)| [axes[0].coord(i), axes[1].coord(j)];
    for k in 0..4 {
        let (a, b) = (k, (k + 1) % 4);
        let (fa, fb) = (vals[a], vals[b]);
        if fa == 0.0 {
            return at(corners[a]);
        }
        if fa * fb <= 0.0 {
            let t = fa / (fa - fb);
            let (pa, pb) = (at(corners[a]), at(corners[b]));
            return [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
        }
    }
    at(corners[0])
}

fn mark_visited(
    poly: &Polyline,
    axes: &[crate::grid::Axis],
    cx: usize,
    cy: usize,
    visited: &mut [bool],
) {
    let (h0, h1) = (axes[0].spacing(), axes[1].spacing());
    let cell_range = |a: f64, b: f64, lower: f64, h: f64, cells: usize| {
        let lo = ((a.min(b) - lower) / h - 1e-9).floor().max(0.0) as usize;
        let hi = ((a.max(b) - lower) / h + 1e-9).floor().max(0.0) as usize;
        lo.min(cells - 1)..=hi.min(cells - 1)
    };
    for (p, q) in poly.segments() {
        for i in cell_range(p[0], q[0], axes[0].lower, h0, cx) {
            for j in cell_range(p[1], q[1], axes[1].lower, h1, cy) {
                visited[i * cy + j] = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl() -> Expr {
        Expr::parse("x1^2 + x2^2", 2).unwrap()
    }

    #[test]
    fn unit_circle_is_one_closed_curve() {
        let g = GridSpec::cube(2, -2.0, 2.0, 41).unwrap();
        let curves = trace_level_set(&bowl(), &g, 1.0, &LevelSetOptions::default()).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert!(c.is_closed());
        let dev = c
            .vertices()
            .iter()
            .map(|v| (v[0].hypot(v[1]) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-6, "radial deviation {dev}");
        // perimeter of the inscribed polygon
        assert!((c.length() - 2.0 * std::f64::consts::PI).abs() < 1e-5);
        let max_seg = c
            .segments()
            .map(|(a, b)| dist([a[0], a[1]], [b[0], b[1]]))
            .fold(0.0, f64::max);
        assert!(max_seg <= 2.0 * 1e-3 + 1e-12);
    }

    #[test]
    fn origin_level_hits_critical_point() {
        let g = GridSpec::cube(2, -1.0, 1.0, 21).unwrap();
        let err = trace_level_set(&bowl(), &g, 0.0, &LevelSetOptions::default()).unwrap_err();
        assert!(
            matches!(err, GeometryError::CriticalPoint { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn level_outside_range_has_no_seed() {
        let g = GridSpec::cube(2, -1.0, 1.0, 21).unwrap();
        let err = trace_level_set(&bowl(), &g, 5.0, &LevelSetOptions::default()).unwrap_err();
        assert_eq!(err, GeometryError::SeedNotFound { level: 5.0 });
    }

    #[test]
    fn linear_level_set_is_clipped_segment() {
        let g = GridSpec::new(vec![
            crate::grid::Axis {
                lower: -1.0,
                upper: 1.0,
                nodes: 21,
            },
            crate::grid::Axis {
                lower: -2.0,
                upper: 2.0,
                nodes: 41,
            },
        ])
        .unwrap();
        let e = Expr::parse("x1 + x2", 2).unwrap();
        let curves = trace_level_set(
            &e,
            &g,
            0.0,
            &LevelSetOptions {
                step: 1e-2,
                max_steps: 10_000,
            },
        )
        .unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves[0];
        assert!(!c.is_closed());
        for v in c.vertices() {
            assert!((v[0] + v[1]).abs() < 1e-14);
        }
        let ends = [c.vertices().first().unwrap(), c.vertices().last().unwrap()];
        for end in ends {
            assert!((end[0].abs() - 1.0).abs() < 1e-12, "{end:?}");
        }
        assert!((c.length() - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_planar_grids() {
        let g = GridSpec::cube(3, -1.0, 1.0, 5).unwrap();
        let e = Expr::parse("x1", 3).unwrap();
        assert_eq!(
            trace_level_set(&e, &g, 0.0, &LevelSetOptions::default()).unwrap_err(),
            GeometryError::NotPlanar(3)
        );
    }

    #[test]
    fn two_components_are_both_found() {
        // double well in x1: level 0.1 crosses at four x1 values -> four vertical lines
        let g = GridSpec::cube(2, -2.0, 2.0, 41).unwrap();
        let e = Expr::parse("(x1^2 - 1)^2", 2).unwrap();
        let curves = trace_level_set(
            &e,
            &g,
            0.1,
            &LevelSetOptions {
                step: 1e-2,
                max_steps: 10_000,
            },
        )
        .unwrap();
        assert_eq!(curves.len(), 4);
        for c in &curves {
            for v in c.vertices() {
                assert!((e.evaluate(v).unwrap() - 0.1).abs() < 1e-12);
            }
        }
    }
}
