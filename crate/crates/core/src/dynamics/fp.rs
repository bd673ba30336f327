//! Explicit finite-volume Fokker–Planck stepping.
//!
//! Control volumes are the trapezoid cells of the grid. The flux across the
//! face between neighbours `i → j` is exponentially fitted
//! (Scharfetter–Gummel):
//!
//! `F = (D/h) [B(δ) p_i − B(−δ) p_j] · area`, `B(x) = x / (eˣ − 1)`,
//!
//! with `δ = -∫_i^j b·dx / D`. Densities proportional to `exp(∫ b·dx / D)`
//! carry zero flux on every face, so for gradient drift the discrete
//! stationary state is the sampled Gibbs density itself. For `δ → 0` the
//! flux reduces to central diffusion and it upwinds as `|δ|` grows.

use serde::Serialize;

use super::{Drift, DynamicsError};
use crate::density::{Density, Provenance};
use crate::geometry::sample_scalar;
use crate::grid::{GridSpec, ScalarField};

#[derive(Clone, Debug)]
pub struct FPConfig {
    pub drift: Drift,
    pub diffusion: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Snapshot cadence in steps; the initial and final states are always
    /// kept.
    pub sample_every: usize,
}

/// `min_i h_i² / (2 n D)`.
pub fn stability_bound(grid: &GridSpec, diffusion: f64) -> f64 {
    let n = grid.dimension() as f64;
    grid.spacings()
        .iter()
        .map(|h| h * h)
        .fold(f64::INFINITY, f64::min)
        / (2.0 * n * diffusion)
}

/// Largest step that passes both the diffusive bound and the outflow check
/// for `drift`.
pub fn max_stable_dt(drift: &Drift, diffusion: f64, grid: &GridSpec) -> Result<f64, DynamicsError> {
    if !(diffusion > 0.0 && diffusion.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "diffusion must be positive, got {diffusion}"
        )));
    }
    let (rate, _) = Operator::new(drift, diffusion, grid)?.max_outflow(1.0);
    Ok(stability_bound(grid, diffusion).min(1.0 / rate))
}

/// Bernoulli function `x / (eˣ − 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

// Gauss–Legendre nodes and weights on [0, 1].
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

/// Edge list with flux coefficients: `F_e = forward_e p_a − backward_e p_b`.
struct Operator {
    a: Vec<usize>,
    b: Vec<usize>,
    forward: Vec<f64>,
    backward: Vec<f64>,
    inv_volume: Vec<f64>,
}

impl Operator {
    fn new(drift: &Drift, diffusion: f64, grid: &GridSpec) -> Result<Operator, DynamicsError> {
        let n = grid.dimension();
        if drift.dimension() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: drift.dimension(),
            });
        }
        let strides = grid.strides();
        let h = grid.spacings();
        let axes = grid.axes();
        let potential = match drift {
            Drift::Gradient { potential, lambda } => {
                Some((sample_scalar(potential, grid)?.into_values(), *lambda))
            }
            Drift::Components(_) => None,
        };
        let components = drift.components();
        let edges_hint = grid.len() * n;
        let mut op = Operator {
            a: Vec::with_capacity(edges_hint),
            b: Vec::with_capacity(edges_hint),
            forward: Vec::with_capacity(edges_hint),
            backward: Vec::with_capacity(edges_hint),
            inv_volume: grid.trapezoid_weights().iter().map(|w| 1.0 / w).collect(),
        };
        let mut x = vec![0.0; n];
        for flat in 0..grid.len() {
            let idx = grid.multi_index(flat);
            for d in 0..n {
                if idx[d] + 1 >= axes[d].nodes {
                    continue;
                }
                let j = flat + strides[d];
                let area: f64 = (0..n)
                    .filter(|&e| e != d)
                    .map(|e| {
                        if idx[e] == 0 || idx[e] + 1 == axes[e].nodes {
                            0.5 * h[e]
                        } else {
                            h[e]
                        }
                    })
                    .product();
                let delta = match &potential {
                    Some((jv, lambda)) => lambda * (jv[j] - jv[flat]) / diffusion,
                    None => {
                        grid.point_into(flat, &mut x);
                        let x0 = x[d];
                        let mut integral = 0.0;
                        for (t, w) in G4_X.iter().zip(G4_W) {
                            x[d] = x0 + t * h[d];
                            let v = components[d].evaluate(&x).map_err(|source| {
                                DynamicsError::Eval {
                                    point: x.clone(),
                                    source,
                                }
                            })?;
                            integral += w * v;
                        }
                        -integral * h[d] / diffusion
                    }
                };
                let scale = diffusion / h[d] * area;
                op.a.push(flat);
                op.b.push(j);
                op.forward.push(scale * bernoulli(delta));
                op.backward.push(scale * bernoulli(-delta));
            }
        }
        Ok(op)
    }

    /// `dp/dt` at every node.
    fn rate(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in 0..self.a.len() {
            let (a, b) = (self.a[e], self.b[e]);
            let flux = self.forward[e] * p[a] - self.backward[e] * p[b];
            out[a] -= flux;
            out[b] += flux;
        }
        for (o, iv) in out.iter_mut().zip(&self.inv_volume) {
            *o *= iv;
        }
    }

    /// Largest fraction of a node's content that leaves in one step of `dt`.
    fn max_outflow(&self, dt: f64) -> (f64, usize) {
        let mut out = vec![0.0; self.inv_volume.len()];
        for e in 0..self.a.len() {
            out[self.a[e]] += self.forward[e];
            out[self.b[e]] += self.backward[e];
        }
        out.iter()
            .zip(&self.inv_volume)
            .map(|(o, iv)| dt * o * iv)
            .enumerate()
            .fold(
                (0.0, 0),
                |best, (i, f)| if f > best.0 { (f, i) } else { best },
            )
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub density: Density,
    pub mass: f64,
    pub min: f64,
    /// `∫ p (λJ + D ln p)`; only defined for gradient drift.
    pub free_energy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FPTrajectory {
    pub snapshots: Vec<Snapshot>,
    /// Step actually used: `t_final / steps`, never above the configured one.
    pub dt: f64,
    pub steps: usize,
}

#[derive(Serialize)]
struct SnapshotSummary {
    step: usize,
    time: f64,
    mass: f64,
    min: f64,
    free_energy: Option<f64>,
}

impl FPTrajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("trajectory has at least the initial state")
    }

    /// Per-snapshot scalars as JSON rows.
    pub fn summary_json(&self) -> serde_json::Value {
        let rows: Vec<SnapshotSummary> = self
            .snapshots
            .iter()
            .map(|s| SnapshotSummary {
                step: s.step,
                time: s.time,
                mass: s.mass,
                min: s.min,
                free_energy: s.free_energy,
            })
            .collect();
        serde_json::to_value(rows).expect("summary serializes")
    }
}

fn plogp(v: f64) -> f64 {
    if v < 1e-300 {
        0.0
    } else {
        v * v.ln()
    }
}

fn free_energy_with(weights: &[f64], p: &[f64], j: &[f64], lambda: f64, diffusion: f64) -> f64 {
    weights
        .iter()
        .zip(p.iter().zip(j))
        .map(|(w, (pi, ji))| w * (lambda * ji * pi + diffusion * plogp(*pi)))
        .sum()
}

/// `F[p] = ∫ p (λJ + D ln p)` for gradient drift, `None` otherwise.
pub fn free_energy(p: &Density, cfg: &FPConfig) -> Result<Option<f64>, DynamicsError> {
    match &cfg.drift {
        Drift::Gradient { potential, lambda } => {
            let j = sample_scalar(potential, p.grid())?.into_values();
            let w = p.grid().trapezoid_weights();
            Ok(Some(free_energy_with(
                &w,
                p.values(),
                &j,
                *lambda,
                cfg.diffusion,
            )))
        }
        Drift::Components(_) => Ok(None),
    }
}

fn validate(cfg: &FPConfig, grid: &GridSpec) -> Result<f64, DynamicsError> {
    let d = cfg.diffusion;
    if !(d > 0.0 && d.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "diffusion must be positive, got {d}"
        )));
    }
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "dt must be positive, got {}",
            cfg.dt
        )));
    }
    if !(cfg.t_final >= cfg.dt) || !cfg.t_final.is_finite() {
        return Err(DynamicsError::InvalidParameter(format!(
            "T = {} must be at least dt = {}",
            cfg.t_final, cfg.dt
        )));
    }
    let bound = stability_bound(grid, d);
    if cfg.dt > bound {
        return Err(DynamicsError::Stability { dt: cfg.dt, bound });
    }
    Ok(bound)
}

/// Evolves `p0` to `cfg.t_final` with forward Euler steps.
pub fn evolve_fp(p0: &Density, cfg: &FPConfig) -> Result<FPTrajectory, DynamicsError> {
    let grid = p0.grid().clone();
    validate(cfg, &grid)?;
    let mass0 = p0.mass();
    if !((mass0 - 1.0).abs() <= 1e-8) {
        return Err(DynamicsError::NotNormalized { mass: mass0 });
    }
    let op = Operator::new(&cfg.drift, cfg.diffusion, &grid)?;
    let steps = (cfg.t_final / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.t_final / steps as f64;
    let (fraction, node) = op.max_outflow(dt);
    if fraction > 1.0 {
        return Err(DynamicsError::DriftStability {
            dt,
            fraction,
            point: grid.point(node),
        });
    }

    let weights = grid.trapezoid_weights();
    let potential = match &cfg.drift {
        Drift::Gradient { potential, lambda } => {
            Some((sample_scalar(potential, &grid)?.into_values(), *lambda))
        }
        Drift::Components(_) => None,
    };
    let lambda_record = potential
        .as_ref()
        .map(|(_, l)| vec![*l])
        .unwrap_or_default();
    let snapshot = |step: usize, p: &[f64]| -> Result<Snapshot, DynamicsError> {
        let field = ScalarField::new(grid.clone(), p.to_vec())?;
        Ok(Snapshot {
            step,
            time: step as f64 * dt,
            mass: field.integral(),
            min: field.min(),
            free_energy: potential
                .as_ref()
                .map(|(j, l)| free_energy_with(&weights, p, j, *l, cfg.diffusion)),
            density: Density {
                field,
                log_z: 0.0,
                provenance: Provenance::PdeEvolved,
                lambda: lambda_record.clone(),
                basepoint: None,
            },
        })
    };

    let every = cfg.sample_every.max(1);
    let mut p = p0.values().to_vec();
    let mut rate = vec![0.0; p.len()];
    let mut snapshots = vec![snapshot(0, &p)?];
    for step in 1..=steps {
        op.rate(&p, &mut rate);
        let mut min = f64::INFINITY;
        let mut argmin = 0;
        for (i, (pi, ri)) in p.iter_mut().zip(&rate).enumerate() {
            *pi += dt * ri;
            if *pi < min {
                min = *pi;
                argmin = i;
            }
        }
        if min < -1e-14 {
            return Err(DynamicsError::NegativeDensity {
                point: grid.point(argmin),
                value: min,
            });
        }
        if step % every == 0 || step == steps {
            snapshots.push(snapshot(step, &p)?);
        }
    }

    let max = p.iter().copied().fold(0.0, f64::max);
    let boundary = (0..grid.len())
        .filter(|&i| grid.is_boundary(i))
        .map(|i| p[i])
        .fold(0.0, f64::max);
    if boundary > 1e-8 * max {
        log::warn!("boundary density {boundary:e} exceeds 1e-8 of the peak {max:e}; the box may be too small");
    }
    Ok(FPTrajectory {
        snapshots,
        dt,
        steps,
    })
}

/// Max-norm of `∇·(-b p) + D Δp` over interior nodes, using the same flux
/// discretization as [`evolve_fp`].
pub fn stationary_residual(p: &Density, cfg: &FPConfig) -> Result<f64, DynamicsError> {
    if !(cfg.diffusion > 0.0 && cfg.diffusion.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!(
            "diffusion must be positive, got {}",
            cfg.diffusion
        )));
    }
    let grid = p.grid();
    let op = Operator::new(&cfg.drift, cfg.diffusion, grid)?;
    let mut rate = vec![0.0; grid.len()];
    op.rate(p.values(), &mut rate);
    Ok((0..grid.len())
        .filter(|&i| !grid.is_boundary(i))
        .map(|i| rate[i].abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::transport::{build_density_by_transport, ConnectionSource, DensityOptions};

    fn gibbs(src: &str, lambda: f64, g: &GridSpec) -> Density {
        let e = Expr::parse(src, g.dimension()).unwrap();
        build_density_by_transport(
            &ConnectionSource::exact(e, lambda),
            g,
            &g.center(),
            &DensityOptions::default(),
        )
        .unwrap()
    }

    fn cfg(src: &str, lambda: f64, dim: usize, dt: f64, t: f64) -> FPConfig {
        FPConfig {
            drift: Drift::gradient(Expr::parse(src, dim).unwrap(), lambda),
            diffusion: 1.0,
            dt,
            t_final: t,
            sample_every: 100,
        }
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-11) - 1.0).abs() < 1e-11);
        assert!((bernoulli(1.0) - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
        assert_eq!(bernoulli(800.0), 0.0);
        for x in [-3.0, -0.1, 0.2, 5.0] {
            assert!((bernoulli(x) - bernoulli(-x) + x).abs() < 1e-14);
        }
    }

    #[test]
    fn one_dimensional_gaussian_residual() {
        let g = GridSpec::cube(1, -8.0, 8.0, 401).unwrap();
        let values: Vec<f64> = g
            .points()
            .map(|x| (-x[0] * x[0]).exp() / std::f64::consts::PI.sqrt())
            .collect();
        let mut p = Density::uniform(g.clone());
        p.field = ScalarField::new(g.clone(), values).unwrap();
        let c = FPConfig {
            drift: Drift::Components(vec![Expr::parse("-2*x1", 1).unwrap()]),
            diffusion: 1.0,
            dt: 1e-4,
            t_final: 1.0,
            sample_every: 1,
        };
        assert!(stationary_residual(&p, &c).unwrap() <= 1e-4);
    }

    #[test]
    fn uniform_residuals() {
        let g = GridSpec::cube(2, -1.0, 1.0, 21).unwrap();
        let u = Density::uniform(g.clone());
        assert!(stationary_residual(&u, &cfg("0", 1.0, 2, 1e-4, 1.0)).unwrap() <= 1e-12);
        let r = stationary_residual(&u, &cfg("x1^2", 1.0, 2, 1e-4, 1.0)).unwrap();
        assert!((r - 2.0 * 0.25).abs() < 1e-12, "{r}");
    }

    #[test]
    fn rejects_unstable_step() {
        let g = GridSpec::cube(2, -1.0, 1.0, 21).unwrap();
        let bound = stability_bound(&g, 1.0);
        assert!((bound - 0.01 / 4.0).abs() < 1e-15);
        let err = evolve_fp(&Density::uniform(g), &cfg("0", 1.0, 2, 2.0 * bound, 1.0)).unwrap_err();
        assert!(matches!(err, DynamicsError::Stability { .. }));
    }

    #[test]
    fn max_stable_dt_passes_both_checks() {
        let g = GridSpec::cube(2, -5.0, 5.0, 41).unwrap();
        let drift = Drift::gradient(Expr::parse("x1^2 + x2^2", 2).unwrap(), 1.0);
        let dt = max_stable_dt(&drift, 1.0, &g).unwrap();
        assert!(dt < stability_bound(&g, 1.0));
        let p0 = Density::uniform(g.clone());
        let run = |dt| {
            evolve_fp(
                &p0,
                &FPConfig {
                    drift: drift.clone(),
                    diffusion: 1.0,
                    dt,
                    t_final: 4.0 * dt,
                    sample_every: 1,
                },
            )
        };
        assert!(run(0.999 * dt).is_ok());
        assert!(matches!(
            run(1.01 * dt),
            Err(DynamicsError::DriftStability { .. })
        ));
    }

    #[test]
    fn steep_drift_trips_positivity_check() {
        let g = GridSpec::cube(1, -5.0, 5.0, 51).unwrap();
        let bound = stability_bound(&g, 1.0);
        let err = evolve_fp(&Density::uniform(g), &cfg("x1^2", 50.0, 1, bound, 1.0)).unwrap_err();
        assert!(
            matches!(err, DynamicsError::DriftStability { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn gibbs_density_is_stationary() {
        let g = GridSpec::cube(2, -5.0, 5.0, 51).unwrap();
        let p = gibbs("x1^2 + x2^2", 1.0, &g);
        let c = cfg("x1^2 + x2^2", 1.0, 2, 0.25 * stability_bound(&g, 1.0), 1.0);
        assert!(stationary_residual(&p, &c).unwrap() < 1e-12);
        let tr = evolve_fp(&p, &c).unwrap();
        let l1 = tr.last().density.field.l1_distance(&p.field).unwrap();
        assert!(l1 <= 1e-6, "{l1}");
    }

    #[test]
    fn pure_diffusion_approaches_uniform_monotonically() {
        let g = GridSpec::cube(1, 0.0, 1.0, 41).unwrap();
        let bump: Vec<f64> = g
            .points()
            .map(|x| 1.0 + 0.8 * (std::f64::consts::PI * x[0]).cos())
            .collect();
        let mut p0 = Density::uniform(g.clone());
        p0.field = ScalarField::new(g.clone(), bump).unwrap();
        let mass = p0.mass();
        p0.field =
            ScalarField::new(g.clone(), p0.values().iter().map(|v| v / mass).collect()).unwrap();
        let c = FPConfig {
            sample_every: 50,
            ..cfg("0", 1.0, 1, 0.5 * stability_bound(&g, 1.0), 1.0)
        };
        let tr = evolve_fp(&p0, &c).unwrap();
        let u = Density::uniform(g);
        let dists: Vec<f64> = tr
            .snapshots
            .iter()
            .map(|s| s.density.field.l1_distance(&u.field).unwrap())
            .collect();
        assert!(dists.windows(2).all(|w| w[1] < w[0]), "{dists:?}");
        assert!(*dists.last().unwrap() < 1e-3);
    }

    #[test]
    fn mass_positivity_and_free_energy() {
        let g = GridSpec::cube(2, -3.0, 3.0, 31).unwrap();
        let c = cfg(
            "0.25*(x1^2 - 1)^2 + 0.5*x2^2",
            1.0,
            2,
            0.25 * stability_bound(&g, 1.0),
            2.0,
        );
        let c = FPConfig {
            sample_every: 10,
            ..c
        };
        let tr = evolve_fp(&Density::uniform(g), &c).unwrap();
        for s in &tr.snapshots {
            assert!((s.mass - 1.0).abs() <= 1e-10 * s.time.max(1.0));
            assert!(s.min >= -1e-14);
        }
        for w in tr.snapshots.windows(2) {
            let steps = (w[1].step - w[0].step) as f64;
            assert!(w[1].free_energy.unwrap() <= w[0].free_energy.unwrap() + 1e-10 * steps);
        }
    }

    #[test]
    fn component_drift_matches_gradient_drift() {
        let g = GridSpec::cube(2, -2.0, 2.0, 21).unwrap();
        let p = gibbs("x1^2 + x1*x2 + x2^2", 1.0, &g);
        let comps = Drift::Components(vec![
            Expr::parse("-(2*x1 + x2)", 2).unwrap(),
            Expr::parse("-(x1 + 2*x2)", 2).unwrap(),
        ]);
        let c = FPConfig {
            drift: comps,
            ..cfg("0", 1.0, 2, 1e-3, 1.0)
        };
        assert!(stationary_residual(&p, &c).unwrap() < 1e-12);
    }
}
