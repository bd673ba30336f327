use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ConfigError, Initial, RunConfig};
use super::{io_err, write_file, CliError, Command, Outcome};
use crate::density::Density;
use crate::dynamics::{
    certify_stationarity, evolve_fp, langevin_sample, stationary_residual, CertificateTolerances,
    Drift, FPConfig, LangevinConfig,
};
use crate::expr::Expr;
use crate::geometry::{trace_level_set, LevelSetOptions};
use crate::grid::GridSpec;
use crate::maxent::{fit_multipliers, ConstraintSet, FitReport, MaxentError};
use crate::transport::{
    build_density_by_transport, parallel_transport, path_independence_check, transport_ode_rk4,
    ConnectionSource, DensityOptions, Polyline,
};

pub(super) fn run(command: Command, cfg: &RunConfig, dir: &Path) -> Result<Outcome, CliError> {
    let grid = cfg.grid_spec()?;
    match command {
        Command::Fit => fit(cfg, &grid, dir),
        Command::Transport => transport(cfg, &grid, dir),
        Command::Evolve => evolve(cfg, &grid, dir),
        Command::Sample => sample(cfg, &grid, dir),
        Command::Certify => certify(cfg, &grid, dir),
        Command::Contour => contour(cfg, &grid, dir),
    }
}

fn solver(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = crate::json::to_string_pretty(value).map_err(solver)?;
    write_file(dir, name, text.as_bytes())
}

fn write_density(dir: &Path, stem: &str, p: &Density) -> Result<(), CliError> {
    let mut csv = Vec::new();
    p.write_csv(&mut csv).map_err(io_err("formatting CSV"))?;
    write_file(dir, &format!("{stem}.csv"), &csv)?;
    write_json(dir, &format!("{stem}.json"), &p.sidecar_json())
}

fn report_json(report: &FitReport) -> Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    v["residualTrajectory"] = json!(report.residual_trajectory);
    v
}

fn run_fit(
    cfg: &RunConfig,
    cs: &ConstraintSet,
    grid: &GridSpec,
) -> Result<(FitReport, Density), MaxentError> {
    fit_multipliers(cs, grid, cfg.solver.tol, cfg.solver.max_iter)
}

/// `Σ λ_k J_k` with fit-mode multipliers fitted first.
fn potential(cfg: &RunConfig, grid: &GridSpec) -> Result<Expr, CliError> {
    let mut cs = cfg.constraint_set()?;
    let fitted = cfg
        .constraints
        .list
        .iter()
        .filter(|c| c.target.is_some())
        .count();
    if fitted > 0 {
        if fitted != cs.len() {
            return Err(config(
                "constraints mix fixed lambda and fitted targets; use one mode",
            ));
        }
        let (report, _) = run_fit(cfg, &cs, grid).map_err(solver)?;
        log::info!(
            "fitted lambda = {:?} in {} iterations",
            report.lambda,
            report.iterations
        );
        cs.set_lambdas(&report.lambda);
    }
    Ok(cs.combined())
}

fn fit(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    let cs = cfg.constraint_set()?;
    if cs.is_empty() || cfg.constraints.list.iter().any(|c| c.target.is_none()) {
        return Err(config(
            "fit needs at least one constraint and a target on every constraint",
        ));
    }
    match run_fit(cfg, &cs, grid) {
        Ok((report, density)) => {
            write_json(dir, "fit_report.json", &report_json(&report))?;
            write_density(dir, "density", &density)?;
            println!(
                "converged in {} iterations: lambda = {:?}",
                report.iterations, report.lambda
            );
            Ok(Outcome::Success)
        }
        Err(MaxentError::NonConvergence { report }) => {
            write_json(dir, "fit_report.json", &report_json(&report))?;
            Err(CliError::Solver(format!(
                "no convergence after {} iterations (residual {:e})",
                report.iterations, report.residual
            )))
        }
        Err(e) => Err(solver(e)),
    }
}

/// The one-form to transport: `-b/λ` for a drift override, `dJ` otherwise.
fn connection(cfg: &RunConfig, grid: &GridSpec) -> Result<ConnectionSource, CliError> {
    match cfg.drift_exprs()? {
        Some(b) => {
            let l = cfg.drift.lambda;
            let scale = if l != 0.0 { -1.0 / l } else { -1.0 };
            ConnectionSource::components(b.iter().map(|c| c.scale(scale)).collect(), 1.0)
                .map_err(solver)
        }
        None => Ok(ConnectionSource::exact(potential(cfg, grid)?, 1.0)),
    }
}

fn transport(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    let vertices = cfg
        .transport
        .path
        .clone()
        .ok_or_else(|| config("transport needs [transport] path"))?;
    let path = if cfg.transport.closed {
        Polyline::closed(vertices)
    } else {
        Polyline::open(vertices)
    }
    .map_err(|e| config(format!("path: {e}")))?;
    if path.dimension() != grid.dimension() {
        return Err(config(format!(
            "path is {}-dimensional, grid is {}",
            path.dimension(),
            grid.dimension()
        )));
    }
    let source = connection(cfg, grid)?;
    let result =
        parallel_transport(&source, &path, cfg.solver.quadrature.into()).map_err(solver)?;
    let rk4 = transport_ode_rk4(&source, &path, 512).map_err(solver)?;
    // a loop measures holonomy directly; open paths are compared with
    // random detours between the same endpoints
    let (factors, spread) = if path.is_closed() {
        (vec![result.factor], (result.factor - 1.0).abs())
    } else {
        let s = path_independence_check(
            &source,
            grid,
            path.start(),
            path.end(),
            cfg.transport.paths_k,
            cfg.dynamics.seed,
        )
        .map_err(solver)?;
        (s.factors, s.spread)
    };
    let independent = spread <= cfg.solver.path_tol;
    write_json(
        dir,
        "transport.json",
        &json!({
            "integral": result.integral,
            "factor": result.factor,
            "partialSums": result.partial_sums,
            "rk4Factor": rk4,
            "pathFactors": factors,
            "pathSpread": spread,
            "pathTolerance": cfg.solver.path_tol,
            "pathIndependent": independent,
        }),
    )?;
    println!("factor = {:e}, path spread = {spread:e}", result.factor);
    Ok(if independent {
        Outcome::Success
    } else {
        Outcome::Rejected
    })
}

fn diffusion(cfg: &RunConfig) -> Result<f64, CliError> {
    let d = cfg.dynamics.diffusion;
    if !(d > 0.0 && d.is_finite()) {
        return Err(config(format!("D must be positive, got {d}")));
    }
    Ok(d)
}

/// The stationary density `∝ exp(-J/D)` built by transport.
fn stationary(cfg: &RunConfig, j: &Expr, grid: &GridSpec) -> Result<Density, CliError> {
    let source = ConnectionSource::exact(j.clone(), 1.0 / diffusion(cfg)?);
    let basepoint = cfg
        .transport
        .basepoint
        .clone()
        .unwrap_or_else(|| grid.center());
    let opts = DensityOptions {
        quadrature: cfg.solver.quadrature.into(),
        ..Default::default()
    };
    build_density_by_transport(&source, grid, &basepoint, &opts).map_err(solver)
}

fn dynamics_error(e: crate::dynamics::DynamicsError) -> CliError {
    use crate::dynamics::DynamicsError as E;
    match e {
        E::Stability { .. }
        | E::DriftStability { .. }
        | E::InvalidParameter(_)
        | E::DimensionMismatch { .. } => config(e.to_string()),
        other => solver(other),
    }
}

fn evolve(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    let (drift, target) = match cfg.drift_exprs()? {
        Some(b) => (Drift::Components(b), None),
        None => {
            let j = potential(cfg, grid)?;
            let target = stationary(cfg, &j, grid)?;
            (Drift::gradient(j, 1.0), Some(target))
        }
    };
    let p0 = match cfg.dynamics.initial {
        Initial::Uniform => Density::uniform(grid.clone()),
        Initial::Stationary => target
            .clone()
            .ok_or_else(|| config("initial = stationary needs a gradient drift"))?,
    };
    let fp = FPConfig {
        drift,
        diffusion: diffusion(cfg)?,
        dt: cfg.dynamics.dt.expect("resolved"),
        t_final: cfg.dynamics.t_final,
        sample_every: cfg.dynamics.sample_every.max(1),
    };
    let traj = evolve_fp(&p0, &fp).map_err(dynamics_error)?;
    let mut rows = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        let name = format!("snapshot_step{:08}_t{:.6e}.csv", s.step, s.time);
        let mut csv = Vec::new();
        s.density
            .write_csv(&mut csv)
            .map_err(io_err("formatting CSV"))?;
        write_file(dir, &name, &csv)?;
        let l1 = target
            .as_ref()
            .map(|t| s.density.field.l1_distance(&t.field))
            .transpose()
            .map_err(solver)?;
        rows.push(json!({
            "file": name,
            "step": s.step,
            "time": s.time,
            "mass": s.mass,
            "min": s.min,
            "freeEnergy": s.free_energy,
            "l1ToStationary": l1,
        }));
    }
    let energies: Vec<f64> = traj
        .snapshots
        .iter()
        .filter_map(|s| s.free_energy)
        .collect();
    let steps_between = fp.sample_every as f64;
    let monotone = energies
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-10 * steps_between);
    let last = traj.last();
    let residual = stationary_residual(&last.density, &fp).map_err(dynamics_error)?;
    write_json(
        dir,
        "convergence.json",
        &json!({
            "dt": traj.dt,
            "steps": traj.steps,
            "diffusion": fp.diffusion,
            "snapshots": rows,
            "freeEnergyNonIncreasing": if energies.is_empty() { Value::Null } else { json!(monotone) },
            "finalStationaryResidual": residual,
        }),
    )?;
    println!(
        "evolved {} steps of dt = {:e}; final mass {}",
        traj.steps, traj.dt, last.mass
    );
    Ok(Outcome::Success)
}

fn sample(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    if cfg.drift.components.is_some() {
        return Err(config(
            "sample needs a gradient drift; remove [drift] components",
        ));
    }
    let j = potential(cfg, grid)?;
    let lc = LangevinConfig {
        lambda: 1.0,
        diffusion: diffusion(cfg)?,
        particles: cfg.dynamics.particles,
        dt: cfg.dynamics.dt.expect("resolved"),
        t_final: cfg.dynamics.t_final,
        seed: cfg.dynamics.seed,
    };
    let result = langevin_sample(&j, &lc, grid).map_err(dynamics_error)?;
    let target = stationary(cfg, &j, grid)?;
    let l1 = result
        .histogram
        .field
        .l1_distance(&target.field)
        .map_err(solver)?;
    let n = result.dimension;
    let count = lc.particles as f64;
    let mean: Vec<f64> = (0..n)
        .map(|d| {
            (0..lc.particles)
                .map(|i| result.position(i)[d])
                .sum::<f64>()
                / count
        })
        .collect();
    let variance: Vec<f64> = (0..n)
        .map(|d| {
            (0..lc.particles)
                .map(|i| (result.position(i)[d] - mean[d]).powi(2))
                .sum::<f64>()
                / count
        })
        .collect();
    write_density(dir, "histogram", &result.histogram)?;
    let mut positions = Vec::new();
    writeln!(
        positions,
        "{}",
        (1..=n)
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .join(",")
    )
    .map_err(io_err("formatting CSV"))?;
    for i in 0..lc.particles {
        let row: Vec<String> = result
            .position(i)
            .iter()
            .map(|x| format!("{x:.16e}"))
            .collect();
        writeln!(positions, "{}", row.join(",")).map_err(io_err("formatting CSV"))?;
    }
    write_file(dir, "positions.csv", &positions)?;
    write_json(
        dir,
        "sample.json",
        &json!({
            "particles": lc.particles,
            "steps": result.steps,
            "dt": lc.dt,
            "T": lc.t_final,
            "seed": lc.seed,
            "mean": mean,
            "variance": variance,
            "l1ToStationary": l1,
        }),
    )?;
    println!(
        "sampled {} particles for {} steps; histogram L1 = {l1:e}",
        lc.particles, result.steps
    );
    Ok(Outcome::Success)
}

fn certify(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    let drift = match cfg.drift_exprs()? {
        Some(b) => b,
        None => potential(cfg, grid)?
            .gradient()
            .iter()
            .map(|d| d.scale(-1.0))
            .collect(),
    };
    let tolerances = CertificateTolerances {
        curvature: cfg.solver.curvature_tol,
        path: cfg.solver.path_tol,
        fp: cfg.solver.fp_tol,
    };
    let cert = certify_stationarity(
        &drift,
        cfg.drift.lambda,
        diffusion(cfg)?,
        grid,
        tolerances,
        cfg.dynamics.seed,
    )
    .map_err(dynamics_error)?;
    write_json(dir, "certificate.json", &cert)?;
    println!(
        "verdict: {}",
        if cert.is_solvable() {
            "stationary-solvable"
        } else {
            "not-solvable"
        }
    );
    Ok(if cert.is_solvable() {
        Outcome::Success
    } else {
        Outcome::Rejected
    })
}

fn contour(cfg: &RunConfig, grid: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    if grid.dimension() != 2 {
        return Err(config("contour needs a two-dimensional problem"));
    }
    if cfg.contour.levels.is_empty() {
        return Err(config("contour needs [contour] levels"));
    }
    let j = potential(cfg, grid)?;
    let program = j.compile();
    let opts = LevelSetOptions {
        step: cfg.contour.step,
        max_steps: cfg.contour.max_steps,
    };
    let mut levels = Vec::new();
    for (k, &level) in cfg.contour.levels.iter().enumerate() {
        let curves = trace_level_set(&j, grid, level, &opts).map_err(solver)?;
        let name = format!("contour_{k}.csv");
        let mut csv = b"x1,x2\n".to_vec();
        let mut summary = Vec::new();
        for (c, curve) in curves.iter().enumerate() {
            if c > 0 {
                csv.push(b'\n');
            }
            for v in curve.vertices() {
                writeln!(csv, "{:.16e},{:.16e}", v[0], v[1]).map_err(io_err("formatting CSV"))?;
            }
            let deviation = curve
                .vertices()
                .iter()
                .map(|v| (program.eval(v) - level).abs())
                .fold(0.0, f64::max);
            summary.push(json!({
                "closed": curve.is_closed(),
                "vertices": curve.vertices().len(),
                "length": curve.length(),
                "maxLevelDeviation": deviation,
            }));
        }
        write_file(dir, &name, &csv)?;
        levels.push(json!({ "level": level, "file": name, "curves": summary }));
    }
    write_json(
        dir,
        "contours.json",
        &json!({ "step": opts.step, "levels": levels }),
    )?;
    println!("traced {} levels", levels.len());
    Ok(Outcome::Success)
}
