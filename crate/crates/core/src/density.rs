use std::io::{self, Write};

use serde::Serialize;

use crate::grid::{GridSpec, ScalarField};

/// How a density was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Endpoints of parallel transport from a basepoint.
    TransportBuilt,
    /// Closed-form Euler–Lagrange solution `exp(-Σ λ_k J_k) / Z`.
    ElBuilt,
    /// Time evolution of the Fokker–Planck equation.
    PdeEvolved,
    /// Result of a gauge transformation.
    GaugeTransformed,
    /// Normalized histogram of Langevin particles.
    Sampled,
    /// Constant density on the box.
    Uniform,
}

/// A normalized density on a grid with its partition constant.
///
/// `log_z` is the logarithm of the integral of the unnormalized function
/// that produced the values; for transport-built densities that function is
/// `exp(-λ(J(x) - J(basepoint)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub field: ScalarField,
    pub log_z: f64,
    pub provenance: Provenance,
    pub lambda: Vec<f64>,
    pub basepoint: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    #[serde(rename = "Z")]
    z: f64,
    #[serde(rename = "logZ")]
    log_z: f64,
    lambda: &'a [f64],
    basepoint: &'a Option<Vec<f64>>,
    provenance: Provenance,
    grid: &'a GridSpec,
}

impl Density {
    pub fn uniform(grid: GridSpec) -> Density {
        let volume = grid.volume();
        Density {
            field: ScalarField::constant(grid, 1.0 / volume),
            log_z: volume.ln(),
            provenance: Provenance::Uniform,
            lambda: Vec::new(),
            basepoint: None,
        }
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn mass(&self) -> f64 {
        self.field.integral()
    }

    /// Largest nodewise relative deviation `|p - q| / |q|`.
    pub fn max_relative_error(&self, reference: &Density) -> f64 {
        self.values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        self.field.write_csv(out)
    }

    /// JSON sidecar `{Z, logZ, lambda, basepoint, provenance, grid}`.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::to_value(Sidecar {
            z: self.z(),
            log_z: self.log_z,
            lambda: &self.lambda,
            basepoint: &self.basepoint,
            provenance: self.provenance,
            grid: self.grid(),
        })
        .expect("sidecar serializes")
    }
}

/// Max-shifted exponentiation of `-potential` followed by trapezoid
/// normalization. Returns normalized values and `ln Z` of `exp(-potential)`.
pub(crate) fn normalize_exp(grid: &GridSpec, potential: &[f64]) -> Option<(Vec<f64>, f64)> {
    let shift = potential.iter().copied().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return None;
    }
    let unnorm: Vec<f64> = potential.iter().map(|v| (-(v - shift)).exp()).collect();
    let mass = crate::grid::integrate(grid, &unnorm);
    if !(mass > 0.0) || !mass.is_finite() {
        return None;
    }
    let values = unnorm.into_iter().map(|v| v / mass).collect();
    Some((values, mass.ln() - shift))
}
