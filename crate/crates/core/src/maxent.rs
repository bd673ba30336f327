//! Constrained entropy: the action, its Euler–Lagrange residual, multiplier
//! fitting by dual Newton, and gauge transformations.
//!
//! All integrals are trapezoid sums on the density's grid, so fitted
//! multipliers match grid moments rather than continuum moments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::density::{normalize_exp, Density, Provenance};
use crate::expr::Expr;
use crate::geometry::{sample_scalar, GeometryError};
use crate::grid::{integrate, GridError, GridSpec, ScalarField};

/// Densities must integrate to one within this before an action is formed.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Values below this contribute nothing to `p ln p`.
const TINY: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MaxentError {
    #[error("constraint dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("density integrates to {mass}, not 1")]
    NotNormalized { mass: f64 },
    #[error("density is {value:e} at {point:?}; expected positive")]
    NonPositive { point: Vec<f64>, value: f64 },
    #[error("constraint {index} has no finite target")]
    MissingTarget { index: usize },
    #[error(
        "singular Hessian (eigenvalue ratio {ratio:e}); near-null combination {null_vector:?}"
    )]
    SingularHessian { null_vector: Vec<f64>, ratio: f64 },
    #[error("no convergence after {} iterations (residual {:e})", .report.iterations, .report.residual)]
    NonConvergence { report: Box<FitReport> },
    #[error("partition constant is not a positive finite number")]
    Normalization,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub expr: Expr,
    pub lambda: f64,
    /// Prescribed expectation `C_k`; `None` means "whatever the density
    /// under consideration achieves", which zeroes the constraint term.
    pub target: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ConstraintSet {
    dimension: usize,
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(dimension: usize) -> ConstraintSet {
        ConstraintSet {
            dimension,
            constraints: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        expr: Expr,
        lambda: f64,
        target: Option<f64>,
    ) -> Result<(), MaxentError> {
        if expr.dimension() != self.dimension {
            return Err(MaxentError::DimensionMismatch {
                expected: self.dimension,
                got: expr.dimension(),
            });
        }
        self.constraints.push(Constraint {
            expr,
            lambda,
            target,
        });
        Ok(())
    }

    pub fn with(
        mut self,
        expr: Expr,
        lambda: f64,
        target: Option<f64>,
    ) -> Result<ConstraintSet, MaxentError> {
        self.push(expr, lambda, target)?;
        Ok(self)
    }

    /// Parses `(source, λ, C)` triples.
    pub fn parse(
        dimension: usize,
        items: &[(&str, f64, Option<f64>)],
    ) -> Result<ConstraintSet, crate::expr::ParseError> {
        let mut cs = ConstraintSet::new(dimension);
        for (src, lambda, target) in items {
            let e = Expr::parse(src, dimension)?;
            cs.constraints.push(Constraint {
                expr: e,
                lambda: *lambda,
                target: *target,
            });
        }
        Ok(cs)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.lambda).collect()
    }

    pub fn set_lambdas(&mut self, lambdas: &[f64]) {
        for (c, l) in self.constraints.iter_mut().zip(lambdas) {
            c.lambda = *l;
        }
    }

    /// `Σ λ_k J_k` as a single expression.
    pub fn combined(&self) -> Expr {
        self.constraints
            .iter()
            .fold(Expr::constant(0.0, self.dimension), |acc, c| {
                acc.add(&c.expr.scale(c.lambda))
            })
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<(), MaxentError> {
        if grid.dimension() != self.dimension {
            return Err(MaxentError::DimensionMismatch {
                expected: grid.dimension(),
                got: self.dimension,
            });
        }
        Ok(())
    }

    fn sample(&self, grid: &GridSpec) -> Result<Vec<Vec<f64>>, MaxentError> {
        self.check_grid(grid)?;
        self.constraints
            .iter()
            .map(|c| Ok(sample_scalar(&c.expr, grid)?.into_values()))
            .collect()
    }
}

fn potential(samples: &[Vec<f64>], lambdas: &[f64], len: usize) -> Vec<f64> {
    let mut u = vec![0.0; len];
    for (j, l) in samples.iter().zip(lambdas) {
        for (ui, ji) in u.iter_mut().zip(j) {
            *ui += l * ji;
        }
    }
    u
}

fn check_normalized(p: &Density) -> Result<(), MaxentError> {
    let mass = p.mass();
    if !((mass - 1.0).abs() <= NORMALIZATION_TOL) {
        return Err(MaxentError::NotNormalized { mass });
    }
    Ok(())
}

fn check_positive(p: &Density) -> Result<(), MaxentError> {
    if let Some((i, &v)) = p.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(MaxentError::NonPositive {
            point: p.grid().point(i),
            value: v,
        });
    }
    Ok(())
}

/// Shannon entropy `-∫ p ln p` by the trapezoid rule.
pub fn shannon_entropy(p: &Density) -> f64 {
    let plogp: Vec<f64> = p
        .values()
        .iter()
        .map(|&v| if v < TINY { 0.0 } else { v * v.ln() })
        .collect();
    -integrate(p.grid(), &plogp)
}

/// `S[p] = -∫ p ln p - Σ λ_k (∫ J_k p - C_k)`.
pub fn entropy_action(p: &Density, cs: &ConstraintSet) -> Result<f64, MaxentError> {
    check_normalized(p)?;
    let samples = cs.sample(p.grid())?;
    let mut s = shannon_entropy(p);
    for (c, j) in cs.constraints.iter().zip(&samples) {
        let moment = moment(p, j);
        let target = c.target.unwrap_or(moment);
        s -= c.lambda * (moment - target);
    }
    Ok(s)
}

fn moment(p: &Density, j: &[f64]) -> f64 {
    let pj: Vec<f64> = p.values().iter().zip(j).map(|(a, b)| a * b).collect();
    integrate(p.grid(), &pj)
}

/// Largest deviation of `-ln p - Σ λ_k J_k` from its node mean.
pub fn el_residual(p: &Density, cs: &ConstraintSet) -> Result<f64, MaxentError> {
    check_positive(p)?;
    let samples = cs.sample(p.grid())?;
    let mut r: Vec<f64> = p.values().iter().map(|v| -v.ln()).collect();
    for (c, j) in cs.constraints.iter().zip(&samples) {
        for (ri, ji) in r.iter_mut().zip(j) {
            *ri -= c.lambda * ji;
        }
    }
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    Ok(r.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max))
}

/// The Euler–Lagrange solution `exp(-Σ λ_k J_k) / Z` at the multipliers
/// stored in `cs`.
pub fn el_density(cs: &ConstraintSet, grid: &GridSpec) -> Result<Density, MaxentError> {
    let samples = cs.sample(grid)?;
    let u = potential(&samples, &cs.lambdas(), grid.len());
    let (values, log_z) = normalize_exp(grid, &u).ok_or(MaxentError::Normalization)?;
    Ok(Density {
        field: ScalarField::new(grid.clone(), values)?,
        log_z,
        provenance: Provenance::ElBuilt,
        lambda: cs.lambdas(),
        basepoint: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub lambda: Vec<f64>,
    pub moments: Vec<f64>,
    /// `max_k |E[J_k] - C_k|`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `ln Z + Σ λ_k C_k` at every accepted iterate.
    #[serde(skip)]
    pub dual_trajectory: Vec<f64>,
    /// Moment residual at every accepted iterate.
    #[serde(skip)]
    pub residual_trajectory: Vec<f64>,
}

struct DualState {
    psi: f64,
    moments: Vec<f64>,
    values: Vec<f64>,
    log_z: f64,
}

fn dual_state(
    grid: &GridSpec,
    samples: &[Vec<f64>],
    lambdas: &[f64],
    targets: &[f64],
) -> Option<DualState> {
    let u = potential(samples, lambdas, grid.len());
    let (values, log_z) = normalize_exp(grid, &u)?;
    let w = grid.trapezoid_weights();
    let moments: Vec<f64> = samples
        .iter()
        .map(|j| {
            values
                .iter()
                .zip(j)
                .zip(&w)
                .map(|((p, j), w)| w * p * j)
                .sum()
        })
        .collect();
    let psi = log_z + lambdas.iter().zip(targets).map(|(l, c)| l * c).sum::<f64>();
    psi.is_finite().then_some(DualState {
        psi,
        moments,
        values,
        log_z,
    })
}

fn covariance(grid: &GridSpec, samples: &[Vec<f64>], st: &DualState) -> DMatrix<f64> {
    let k = samples.len();
    let w = grid.trapezoid_weights();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let cov: f64 = (0..grid.len())
                .map(|i| {
                    w[i] * st.values[i]
                        * (samples[a][i] - st.moments[a])
                        * (samples[b][i] - st.moments[b])
                })
                .sum();
            h[(a, b)] = cov;
            h[(b, a)] = cov;
        }
    }
    h
}

/// Rounding allowance when comparing successive dual values.
fn dual_slack(psi: f64) -> f64 {
    8.0 * f64::EPSILON * psi.abs().max(1.0)
}

/// Fits the multipliers of `cs` to its targets by damped Newton on the
/// convex dual `λ ↦ ln Z(λ) + Σ λ_k C_k`, starting from `λ = 0`.
pub fn fit_multipliers(
    cs: &ConstraintSet,
    grid: &GridSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(FitReport, Density), MaxentError> {
    let targets = cs
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.target
                .filter(|t| t.is_finite())
                .ok_or(MaxentError::MissingTarget { index: i })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let samples = cs.sample(grid)?;
    let k = samples.len();
    let mut lambdas = vec![0.0; k];
    let mut st =
        dual_state(grid, &samples, &lambdas, &targets).ok_or(MaxentError::Normalization)?;
    let residual_of = |st: &DualState| {
        st.moments
            .iter()
            .zip(&targets)
            .map(|(m, c)| (m - c).abs())
            .fold(0.0, f64::max)
    };
    let mut dual_trajectory = vec![st.psi];
    let mut residual_trajectory = vec![residual_of(&st)];
    let mut iterations = 0;
    let mut converged = residual_of(&st) <= tol;

    while !converged && iterations < max_iter {
        let h = covariance(grid, &samples, &st);
        let eig = SymmetricEigen::new(h);
        let (imin, &emin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one constraint");
        let emax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        if !(emin > 1e-12 * emax) {
            if iterations > 0 {
                // the density collapsed onto a level set of J while chasing the target
                break;
            }
            return Err(MaxentError::SingularHessian {
                null_vector: eig.eigenvectors.column(imin).iter().copied().collect(),
                ratio: if emax > 0.0 { emin / emax } else { 0.0 },
            });
        }
        // Newton direction -H^{-1} ∇Ψ with ∇Ψ = C - E[J]
        let g = DVector::from_iterator(k, st.moments.iter().zip(&targets).map(|(m, c)| m - c));
        let vt_g = eig.eigenvectors.transpose() * g;
        let scaled = DVector::from_iterator(
            k,
            vt_g.iter().zip(eig.eigenvalues.iter()).map(|(a, e)| a / e),
        );
        let step = &eig.eigenvectors * scaled;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = lambdas
                .iter()
                .zip(step.iter())
                .map(|(l, s)| l + t * s)
                .collect();
            if let Some(next) = dual_state(grid, &samples, &trial, &targets) {
                if next.psi <= st.psi + dual_slack(st.psi) {
                    accepted = Some((trial, next));
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((trial, next)) = accepted else { break };
        lambdas = trial;
        st = next;
        dual_trajectory.push(st.psi);
        residual_trajectory.push(residual_of(&st));
        converged = residual_of(&st) <= tol;
    }

    let report = FitReport {
        lambda: lambdas.clone(),
        moments: st.moments.clone(),
        residual: residual_of(&st),
        iterations,
        converged,
        dual_trajectory,
        residual_trajectory,
    };
    if !converged {
        return Err(MaxentError::NonConvergence {
            report: Box::new(report),
        });
    }
    let density = Density {
        field: ScalarField::new(grid.clone(), st.values)?,
        log_z: st.log_z,
        provenance: Provenance::ElBuilt,
        lambda: lambdas,
        basepoint: None,
    };
    Ok((report, density))
}

/// `p ↦ exp(-λ' J') p / Z'`, with `(J', λ')` appended to the constraints.
pub fn gauge_transform(
    p: &Density,
    cs: &ConstraintSet,
    j_prime: &Expr,
    lambda_prime: f64,
) -> Result<(Density, ConstraintSet), MaxentError> {
    check_positive(p)?;
    if j_prime.dimension() != cs.dimension {
        return Err(MaxentError::DimensionMismatch {
            expected: cs.dimension,
            got: j_prime.dimension(),
        });
    }
    let grid = p.grid();
    let v: Vec<f64> = sample_scalar(j_prime, grid)?
        .values()
        .iter()
        .map(|j| lambda_prime * j)
        .collect();
    let shift = v.iter().copied().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(MaxentError::Normalization);
    }
    let factors: Vec<f64> = v.iter().map(|x| (-(x - shift)).exp()).collect();
    let (values, log_z) = if factors.iter().all(|&f| f == 1.0) {
        (p.values().to_vec(), p.log_z - shift)
    } else {
        let unnorm: Vec<f64> = p
            .values()
            .iter()
            .zip(&factors)
            .map(|(a, f)| a * f)
            .collect();
        let mass = integrate(grid, &unnorm);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(MaxentError::Normalization);
        }
        (
            unnorm.into_iter().map(|u| u / mass).collect(),
            p.log_z + mass.ln() - shift,
        )
    };
    let mut cs_prime = cs.clone();
    cs_prime.push(j_prime.clone(), lambda_prime, None)?;
    let mut lambda = p.lambda.clone();
    lambda.push(lambda_prime);
    let density = Density {
        field: ScalarField::new(grid.clone(), values)?,
        log_z,
        provenance: Provenance::GaugeTransformed,
        lambda,
        basepoint: p.basepoint.clone(),
    };
    Ok((density, cs_prime))
}

/// Reweights `p` by smooth bumps `exp(ε ψ_j)`, `j = 1..count-1`; entry 0 is
/// `p` itself.
pub fn candidate_family(
    p: &Density,
    count: usize,
    epsilon: f64,
) -> Result<Vec<Density>, MaxentError> {
    let grid = p.grid();
    let axes = grid.axes();
    let mut out = vec![p.clone()];
    let mut x = vec![0.0; grid.dimension()];
    for j in 1..count {
        let unnorm: Vec<f64> = (0..grid.len())
            .map(|flat| {
                grid.point_into(flat, &mut x);
                let psi: f64 = x
                    .iter()
                    .zip(axes)
                    .enumerate()
                    .map(|(d, (xi, a))| {
                        let t = (xi - a.lower) / (a.upper - a.lower);
                        (j as f64 * std::f64::consts::PI * t + d as f64).cos()
                    })
                    .sum();
                p.values()[flat] * (epsilon * psi).exp()
            })
            .collect();
        let mass = integrate(grid, &unnorm);
        out.push(Density {
            field: ScalarField::new(grid.clone(), unnorm.into_iter().map(|u| u / mass).collect())?,
            log_z: p.log_z + mass.ln(),
            provenance: p.provenance,
            lambda: p.lambda.clone(),
            basepoint: p.basepoint.clone(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugeReport {
    pub residual_before: f64,
    pub residual_after: f64,
    pub actions_before: Vec<f64>,
    pub actions_after: Vec<f64>,
    pub winner_before: usize,
    pub winner_after: usize,
    /// Residuals agree within 1e-8 and the same candidate wins.
    pub invariant: bool,
}

fn with_moment_targets(cs: &ConstraintSet, p: &Density) -> Result<ConstraintSet, MaxentError> {
    let samples = cs.sample(p.grid())?;
    let mut out = cs.clone();
    for (c, j) in out.constraints.iter_mut().zip(&samples) {
        c.target = Some(moment(p, j));
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Compares Euler–Lagrange residuals and the action's argmax over a
/// candidate family before and after a gauge transformation. The targets of
/// each constraint are pinned at the moments of the (transformed) base
/// density.
pub fn gauge_invariance_check(
    p_before: &Density,
    cs_before: &ConstraintSet,
    j_prime: &Expr,
    lambda_prime: f64,
    candidates: usize,
) -> Result<GaugeReport, MaxentError> {
    let (p_after, cs_after) = gauge_transform(p_before, cs_before, j_prime, lambda_prime)?;
    let residual_before = el_residual(p_before, cs_before)?;
    let residual_after = el_residual(&p_after, &cs_after)?;

    let family = candidate_family(p_before, candidates.max(1), 0.1)?;
    let pinned_before = with_moment_targets(cs_before, p_before)?;
    let pinned_after = with_moment_targets(&cs_after, &p_after)?;
    let actions_before = family
        .iter()
        .map(|q| entropy_action(q, &pinned_before))
        .collect::<Result<Vec<_>, _>>()?;
    let actions_after = family
        .iter()
        .map(|q| {
            let (q_after, _) = gauge_transform(q, cs_before, j_prime, lambda_prime)?;
            entropy_action(&q_after, &pinned_after)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let winner_before = argmax(&actions_before);
    let winner_after = argmax(&actions_after);
    Ok(GaugeReport {
        invariant: (residual_before - residual_after).abs() <= 1e-8
            && winner_before == winner_after,
        residual_before,
        residual_after,
        actions_before,
        actions_after,
        winner_before,
        winner_after,
    })
}
