//! Fields on the base space: sampling potentials, the connection `λ dJ`,
//! its discrete curvature, level-set tracing and the horizontal/vertical
//! splitting of vector fields.

mod contour;

use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::grid::{CovectorField, GridError, GridSpec, ScalarField};

pub use contour::{trace_level_set, LevelSetOptions};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GeometryError {
    #[error("expression dimension {expr} does not match grid dimension {grid}")]
    DimensionMismatch { expr: usize, grid: usize },
    #[error("evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("level sets are traced in two dimensions only (got {0})")]
    NotPlanar(usize),
    #[error("no grid cell brackets level {level}")]
    SeedNotFound { level: f64 },
    #[error("gradient norm {grad_norm:e} below threshold at {point:?}")]
    CriticalPoint { point: Vec<f64>, grad_norm: f64 },
    #[error("invalid tracing parameter: {0}")]
    InvalidParameter(String),
}

fn check_dim(e: &Expr, g: &GridSpec) -> Result<(), GeometryError> {
    if e.dimension() != g.dimension() {
        return Err(GeometryError::DimensionMismatch {
            expr: e.dimension(),
            grid: g.dimension(),
        });
    }
    Ok(())
}

/// Node-wise evaluation of `e`.
pub fn sample_scalar(e: &Expr, grid: &GridSpec) -> Result<ScalarField, GeometryError> {
    check_dim(e, grid)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut p = vec![0.0; grid.dimension()];
    for flat in 0..grid.len() {
        grid.point_into(flat, &mut p);
        let v = e.evaluate(&p).map_err(|source| GeometryError::Eval {
            point: p.clone(),
            source,
        })?;
        values.push(v);
    }
    Ok(ScalarField::new(grid.clone(), values)?)
}

/// Samples one expression per component into a covector field.
pub fn sample_components(
    components: &[Expr],
    grid: &GridSpec,
) -> Result<CovectorField, GeometryError> {
    let n = grid.dimension();
    if components.len() != n {
        return Err(GeometryError::DimensionMismatch {
            expr: components.len(),
            grid: n,
        });
    }
    for c in components {
        check_dim(c, grid)?;
    }
    let mut out = Vec::with_capacity(grid.len() * n);
    let mut p = vec![0.0; n];
    for flat in 0..grid.len() {
        grid.point_into(flat, &mut p);
        for c in components {
            let v = c.evaluate(&p).map_err(|source| GeometryError::Eval {
                point: p.clone(),
                source,
            })?;
            out.push(v);
        }
    }
    Ok(CovectorField::new(grid.clone(), out)?)
}

/// The pullback connection `A = λ ∂_i J dx^i`, from symbolic derivatives.
pub fn connection_form(
    e: &Expr,
    lambda: f64,
    grid: &GridSpec,
) -> Result<CovectorField, GeometryError> {
    check_dim(e, grid)?;
    let comps: Vec<Expr> = e.gradient().iter().map(|d| d.scale(lambda)).collect();
    sample_components(&comps, grid)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CurvatureReport {
    /// max |∂_i A_j − ∂_j A_i| over interior nodes and index pairs.
    pub max_curvature: f64,
    pub tolerance: f64,
    pub flat: bool,
}

/// Discrete exterior derivative of a one-form by central differences on
/// interior nodes. In one dimension every form is closed.
pub fn curvature(a: &CovectorField, tolerance: f64) -> CurvatureReport {
    let g = a.grid();
    let n = g.dimension();
    let mut max = 0.0f64;
    if n >= 2 {
        let strides = g.strides();
        let h = g.spacings();
        for flat in 0..g.len() {
            if g.is_boundary(flat) {
                continue;
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let d_i_aj = (a.component(flat + strides[i], j)
                        - a.component(flat - strides[i], j))
                        / (2.0 * h[i]);
                    let d_j_ai = (a.component(flat + strides[j], i)
                        - a.component(flat - strides[j], i))
                        / (2.0 * h[j]);
                    max = max.max((d_i_aj - d_j_ai).abs());
                }
            }
        }
    }
    CurvatureReport {
        max_curvature: max,
        tolerance,
        flat: max <= tolerance,
    }
}

/// Splits a vector field into the part tangent to the level sets of the
/// connection (horizontal) and the part along the Euclidean dual of `A`
/// (vertical). Where |A| < 1e-12 the whole field is horizontal.
pub fn split_field(
    v: &CovectorField,
    a: &CovectorField,
) -> Result<(CovectorField, CovectorField), GeometryError> {
    if v.grid() != a.grid() {
        return Err(GridError::Mismatch.into());
    }
    let n = v.grid().dimension();
    let mut horizontal = Vec::with_capacity(v.components().len());
    let mut vertical = Vec::with_capacity(v.components().len());
    for flat in 0..v.grid().len() {
        let vv = v.at(flat);
        let aa = a.at(flat);
        let norm = aa.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            horizontal.extend_from_slice(vv);
            vertical.extend(std::iter::repeat_n(0.0, n));
            continue;
        }
        let unit: Vec<f64> = aa.iter().map(|x| x / norm).collect();
        let along: f64 = vv.iter().zip(&unit).map(|(x, u)| x * u).sum();
        for k in 0..n {
            let vert = along * unit[k];
            vertical.push(vert);
            horizontal.push(vv[k] - vert);
        }
    }
    Ok((
        CovectorField::new(v.grid().clone(), horizontal)?,
        CovectorField::new(v.grid().clone(), vertical)?,
    ))
}
