//! Fokker–Planck evolution, stationary residuals, the stationarity
//! certificate and a Langevin sampler.
//!
//! The drift `b` enters as `∂_t p = -∇·(b p) + D Δp`. For a gradient drift
//! `b = -λ∇J` the stationary density is `exp(-λJ/D) / Z`.

mod certificate;
mod fp;
mod langevin;

use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::geometry::GeometryError;
use crate::grid::GridError;
use crate::transport::TransportError;

pub use certificate::{
    certify_stationarity, CertificateTolerances, StationarityCertificate, Verdict,
};
pub use fp::{
    evolve_fp, free_energy, max_stable_dt, stability_bound, stationary_residual, FPConfig,
    FPTrajectory, Snapshot,
};
pub use langevin::{langevin_sample, LangevinConfig, LangevinResult};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DynamicsError {
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    Stability { dt: f64, bound: f64 },
    #[error("time step {dt:e} gives outflow fraction {fraction} > 1 at {point:?}")]
    DriftStability {
        dt: f64,
        fraction: f64,
        point: Vec<f64>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("density integrates to {mass}, not 1")]
    NotNormalized { mass: f64 },
    #[error("density fell to {value:e} at {point:?}")]
    NegativeDensity { point: Vec<f64>, value: f64 },
    #[error("drift has {got} components for a {expected}-dimensional grid")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("drift evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
    #[error("particle {particle} escaped to {point:?}; reduce dt")]
    Escape { particle: usize, point: Vec<f64> },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Drift field of the Fokker–Planck equation.
#[derive(Clone, Debug)]
pub enum Drift {
    /// `b = -λ ∇J`.
    Gradient { potential: Expr, lambda: f64 },
    /// `b` given componentwise; need not be a gradient.
    Components(Vec<Expr>),
}

impl Drift {
    pub fn gradient(potential: Expr, lambda: f64) -> Drift {
        Drift::Gradient { potential, lambda }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Drift::Gradient { potential, .. } => potential.dimension(),
            Drift::Components(c) => c.len(),
        }
    }

    /// Drift components as expressions.
    pub fn components(&self) -> Vec<Expr> {
        match self {
            Drift::Gradient { potential, lambda } => potential
                .gradient()
                .iter()
                .map(|d| d.scale(-lambda))
                .collect(),
            Drift::Components(c) => c.clone(),
        }
    }
}
