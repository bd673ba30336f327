//! Stationarity certificate: a drift admits a stationary Fokker–Planck
//! density exactly when the connection `A = -b/λ` is flat, its transport is
//! path independent, and the transported density solves the stationary
//! equation.

use serde::Serialize;

use super::fp::{stationary_residual, FPConfig};
use super::{Drift, DynamicsError};
use crate::expr::Expr;
use crate::geometry::{curvature, sample_components};
use crate::grid::GridSpec;
use crate::transport::{
    build_density_by_transport, path_independence_check, ConnectionSource, DensityOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CertificateTolerances {
    pub curvature: f64,
    pub path: f64,
    pub fp: f64,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        CertificateTolerances {
            curvature: 1e-8,
            path: 1e-8,
            fp: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    StationarySolvable,
    NotSolvable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StationarityCertificate {
    pub curvature_max: f64,
    /// Largest transport-factor spread over the endpoint pairs; absent when
    /// the curvature check already failed.
    pub path_spread: Option<f64>,
    /// Stationary residual of the transported density; absent unless both
    /// geometric checks passed.
    pub fp_residual: Option<f64>,
    pub verdict: Verdict,
    pub tolerances: CertificateTolerances,
}

impl StationarityCertificate {
    pub fn is_solvable(&self) -> bool {
        self.verdict == Verdict::StationarySolvable
    }
}

const PATHS_PER_PAIR: usize = 8;

/// Endpoint pairs as fractions of each box side.
const ENDPOINT_FRACTIONS: [(f64, f64); 4] = [(0.25, 0.75), (0.8, 0.15), (0.1, 0.9), (0.6, 0.35)];

/// Checks curvature, path independence (8 seeded paths for each of 4
/// endpoint pairs) and, if both pass, the stationary residual of the
/// transport-built density `∝ exp(∫ b·dx / D)`.
pub fn certify_stationarity(
    drift: &[Expr],
    lambda: f64,
    diffusion: f64,
    grid: &GridSpec,
    tolerances: CertificateTolerances,
    seed: u64,
) -> Result<StationarityCertificate, DynamicsError> {
    let n = grid.dimension();
    if drift.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: drift.len(),
        });
    }
    if !(diffusion > 0.0 && diffusion.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "diffusion must be positive, got {diffusion}"
        )));
    }
    let scale = if lambda != 0.0 { -1.0 / lambda } else { -1.0 };
    let a_exprs: Vec<Expr> = drift.iter().map(|b| b.scale(scale)).collect();
    let a = sample_components(&a_exprs, grid)?;
    let curv = curvature(&a, tolerances.curvature);
    let mut cert = StationarityCertificate {
        curvature_max: curv.max_curvature,
        path_spread: None,
        fp_residual: None,
        verdict: Verdict::NotSolvable,
        tolerances,
    };
    if !curv.flat {
        return Ok(cert);
    }

    let source = ConnectionSource::components(a_exprs, 1.0)?;
    let axes = grid.axes();
    let mut spread = 0.0f64;
    for (k, (s, e)) in ENDPOINT_FRACTIONS.iter().enumerate() {
        let at = |f: f64, shift: usize| -> Vec<f64> {
            axes.iter()
                .enumerate()
                .map(|(d, ax)| {
                    // stagger coordinates so endpoints are not all on the diagonal
                    let f = if (d + shift).is_multiple_of(2) {
                        f
                    } else {
                        1.0 - f * 0.8
                    };
                    ax.lower + f * (ax.upper - ax.lower)
                })
                .collect()
        };
        let r = path_independence_check(
            &source,
            grid,
            &at(*s, k),
            &at(*e, k + 1),
            PATHS_PER_PAIR,
            seed.wrapping_add(k as u64),
        )?;
        spread = spread.max(r.spread);
    }
    cert.path_spread = Some(spread);
    if !(spread <= tolerances.path) {
        return Ok(cert);
    }

    let to_density = ConnectionSource::components(
        drift.iter().map(|b| b.scale(-1.0 / diffusion)).collect(),
        1.0,
    )?;
    let p = build_density_by_transport(
        &to_density,
        grid,
        &grid.center(),
        &DensityOptions::default(),
    )?;
    let cfg = FPConfig {
        drift: Drift::Components(drift.to_vec()),
        diffusion,
        dt: f64::MIN_POSITIVE,
        t_final: f64::MIN_POSITIVE,
        sample_every: 1,
    };
    let residual = stationary_residual(&p, &cfg)?;
    cert.fp_residual = Some(residual);
    if residual <= tolerances.fp {
        cert.verdict = Verdict::StationarySolvable;
    }
    Ok(cert)
}
