//! Rectangular grids over a patch of state space and the fields sampled on them.
//!
//! Nodes are stored row-major: the last axis varies fastest.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on the number of grid nodes.
pub const DEFAULT_NODE_CAP: usize = 1 << 24;

pub const MAX_DIMENSION: usize = 3;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GridError {
    #[error("dimension {0} outside 1..=3")]
    Dimension(usize),
    #[error("axis {axis}: upper bound {upper} must exceed lower bound {lower}")]
    Bounds { axis: usize, lower: f64, upper: f64 },
    #[error("axis {axis}: need at least 3 nodes, got {nodes}")]
    TooFewNodes { axis: usize, nodes: usize },
    #[error("grid has {total} nodes, cap is {cap}")]
    TooManyNodes { total: usize, cap: usize },
    #[error("field has {got} values, grid needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("fields live on different grids")]
    Mismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    /// Coordinate of node `i`; the last node lands exactly on `upper`.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }

    fn trapezoid_weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.nodes {
            0.5 * h
        } else {
            h
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<GridSpec, GridError> {
        GridSpec::with_cap(axes, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(axes: Vec<Axis>, cap: usize) -> Result<GridSpec, GridError> {
        if axes.is_empty() || axes.len() > MAX_DIMENSION {
            return Err(GridError::Dimension(axes.len()));
        }
        let mut total: usize = 1;
        for (axis, a) in axes.iter().enumerate() {
            if !(a.upper > a.lower) || !a.lower.is_finite() || !a.upper.is_finite() {
                return Err(GridError::Bounds {
                    axis,
                    lower: a.lower,
                    upper: a.upper,
                });
            }
            if a.nodes < 3 {
                return Err(GridError::TooFewNodes {
                    axis,
                    nodes: a.nodes,
                });
            }
            total = total.saturating_mul(a.nodes);
        }
        if total > cap {
            return Err(GridError::TooManyNodes { total, cap });
        }
        Ok(GridSpec { axes })
    }

    /// Same bounds and node count on every axis.
    pub fn cube(
        dimension: usize,
        lower: f64,
        upper: f64,
        nodes: usize,
    ) -> Result<GridSpec, GridError> {
        GridSpec::new(vec![
            Axis {
                lower,
                upper,
                nodes
            };
            dimension
        ])
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    /// Row-major stride of each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dimension()];
        for k in (0..self.dimension().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].nodes;
        }
        strides
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dimension()];
        for k in (0..self.dimension()).rev() {
            let n = self.axes[k].nodes;
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.nodes + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dimension()];
        self.point_into(flat, &mut p);
        p
    }

    pub fn point_into(&self, mut flat: usize, out: &mut [f64]) {
        for k in (0..self.dimension()).rev() {
            let a = &self.axes[k];
            out[k] = a.coord(flat % a.nodes);
            flat /= a.nodes;
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// True when the node touches the boundary of the box on any axis.
    pub fn is_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| i == 0 || i + 1 == a.nodes)
    }

    /// Tensor-product trapezoid weights; these are also the control volumes
    /// of the node-centred finite-volume cells.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut weights = vec![1.0];
        for a in &self.axes {
            let axis_w: Vec<f64> = (0..a.nodes).map(|i| a.trapezoid_weight(i)).collect();
            weights = weights
                .iter()
                .flat_map(|&w| axis_w.iter().map(move |&v| w * v))
                .collect();
        }
        weights
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.upper - a.lower).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| 0.5 * (a.lower + a.upper))
            .collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dimension()
            && point
                .iter()
                .zip(&self.axes)
                .all(|(&x, a)| x >= a.lower && x <= a.upper)
    }

    /// Index of the nearest node along each axis.
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let idx: Vec<usize> = point
            .iter()
            .zip(&self.axes)
            .map(|(&x, a)| {
                let t = ((x - a.lower) / a.spacing()).round();
                t.clamp(0.0, (a.nodes - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&idx)
    }
}

/// Trapezoid-rule integral of `values` over the grid. Summation is serial in
/// node order so the result is reproducible bit for bit.
pub fn integrate(grid: &GridSpec, values: &[f64]) -> f64 {
    grid.trapezoid_weights()
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

fn write_sig17(out: &mut impl Write, v: f64) -> io::Result<()> {
    write!(out, "{:.16e}", v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<ScalarField, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { node, value });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> ScalarField {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![value; n],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        integrate(&self.grid, &self.values)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid L1 distance to another field on the same grid.
    pub fn l1_distance(&self, other: &ScalarField) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::Mismatch);
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(integrate(&self.grid, &diff))
    }

    /// CSV with header `x1,...,xn,value`, one node per line.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        let n = self.grid.dimension();
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain(["value".into()])
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let mut p = vec![0.0; n];
        for (flat, v) in self.values.iter().enumerate() {
            self.grid.point_into(flat, &mut p);
            for x in &p {
                write_sig17(out, *x)?;
                out.write_all(b",")?;
            }
            write_sig17(out, *v)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One covector (or, by Euclidean duality, one vector) per node.
#[derive(Clone, Debug, PartialEq)]
pub struct CovectorField {
    grid: GridSpec,
    components: Vec<f64>,
}

impl CovectorField {
    pub fn new(grid: GridSpec, components: Vec<f64>) -> Result<CovectorField, GridError> {
        let expected = grid.len() * grid.dimension();
        if components.len() != expected {
            return Err(GridError::Length {
                expected,
                got: components.len(),
            });
        }
        if let Some((i, &value)) = components.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite {
                node: i / grid.dimension(),
                value,
            });
        }
        Ok(CovectorField { grid, components })
    }

    pub fn zeros(grid: GridSpec) -> CovectorField {
        let n = grid.len() * grid.dimension();
        CovectorField {
            grid,
            components: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Components at node `flat`.
    pub fn at(&self, flat: usize) -> &[f64] {
        let n = self.grid.dimension();
        &self.components[flat * n..(flat + 1) * n]
    }

    /// Component `axis` at node `flat`.
    #[inline]
    pub fn component(&self, flat: usize, axis: usize) -> f64 {
        self.components[flat * self.grid.dimension() + axis]
    }

    /// CSV with header `x1,...,xn,A1,...,An`.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        let n = self.grid.dimension();
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain((1..=n).map(|i| format!("A{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let mut p = vec![0.0; n];
        for flat in 0..self.grid.len() {
            self.grid.point_into(flat, &mut p);
            let vals = p.iter().chain(self.at(flat));
            for (k, v) in vals.enumerate() {
                if k > 0 {
                    out.write_all(b",")?;
                }
                write_sig17(out, *v)?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_specs() {
        assert_eq!(GridSpec::new(vec![]), Err(GridError::Dimension(0)));
        let a = Axis {
            lower: 0.0,
            upper: 1.0,
            nodes: 3,
        };
        assert_eq!(GridSpec::new(vec![a; 4]), Err(GridError::Dimension(4)));
        assert!(matches!(
            GridSpec::new(vec![Axis {
                lower: 1.0,
                upper: 1.0,
                nodes: 5
            }]),
            Err(GridError::Bounds { .. })
        ));
        assert!(matches!(
            GridSpec::new(vec![Axis {
                lower: 0.0,
                upper: 1.0,
                nodes: 2
            }]),
            Err(GridError::TooFewNodes { axis: 0, nodes: 2 })
        ));
        assert!(matches!(
            GridSpec::with_cap(
                vec![
                    Axis {
                        lower: 0.0,
                        upper: 1.0,
                        nodes: 100
                    };
                    2
                ],
                1000
            ),
            Err(GridError::TooManyNodes {
                total: 10000,
                cap: 1000
            })
        ));
    }

    #[test]
    fn indexing_is_row_major() {
        let g = GridSpec::new(vec![
            Axis {
                lower: 0.0,
                upper: 2.0,
                nodes: 3,
            },
            Axis {
                lower: -1.0,
                upper: 1.0,
                nodes: 5,
            },
        ])
        .unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.strides(), vec![5, 1]);
        assert_eq!(g.multi_index(7), vec![1, 2]);
        assert_eq!(g.flat_index(&[1, 2]), 7);
        assert_eq!(g.point(7), vec![1.0, 0.0]);
        assert_eq!(g.point(14), vec![2.0, 1.0]);
        assert!(g.is_boundary(0) && g.is_boundary(5) && !g.is_boundary(7));
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = GridSpec::cube(2, 0.0, 2.0, 11).unwrap();
        let f: Vec<f64> = g.points().map(|p| 1.0 + p[0] + 3.0 * p[1]).collect();
        // ∫∫ (1 + x + 3y) over [0,2]^2 = 4 + 4 + 12
        assert!((integrate(&g, &f) - 20.0).abs() < 1e-12);
        assert!((g.trapezoid_weights().iter().sum::<f64>() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::cube(1, 0.0, 1.0, 3).unwrap();
        let f = ScalarField::new(g.clone(), vec![1.0, 0.5, 0.25]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,value");
        assert_eq!(lines[2], "5.0000000000000000e-1,5.0000000000000000e-1");
        let a = CovectorField::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x1,A1\n"));
    }

    #[test]
    fn fields_reject_bad_values() {
        let g = GridSpec::cube(1, 0.0, 1.0, 3).unwrap();
        assert!(matches!(
            ScalarField::new(g.clone(), vec![1.0]),
            Err(GridError::Length { .. })
        ));
        assert!(matches!(
            ScalarField::new(g, vec![1.0, f64::NAN, 0.0]),
            Err(GridError::NonFinite { node: 1, .. })
        ));
    }
}
