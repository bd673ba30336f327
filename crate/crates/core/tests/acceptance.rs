//! Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Criteria run sequentially so their wall-clock budgets are
//! measured without contention.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use congeo_core::density::Density;
use congeo_core::dynamics::{
    certify_stationarity, evolve_fp, langevin_sample, stability_bound, CertificateTolerances,
    Drift, FPConfig, LangevinConfig, Verdict,
};
use congeo_core::expr::Expr;
use congeo_core::geometry::{trace_level_set, LevelSetOptions};
use congeo_core::grid::GridSpec;
use congeo_core::maxent::{el_density, fit_multipliers, gauge_invariance_check, ConstraintSet};
use congeo_core::transport::{build_density_by_transport, ConnectionSource, DensityOptions};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// Collects individual checks of one criterion.
#[derive(Default)]
struct Criterion {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failures.push(what.clone());
        }
        self.notes.push(what);
    }
}

fn gaussian() -> Expr {
    Expr::parse("x1^2 + x2^2", 2).unwrap()
}

fn scenario_grid() -> GridSpec {
    GridSpec::cube(2, -5.0, 5.0, 201).unwrap()
}

fn transport_density(j: &Expr, lambda: f64, g: &GridSpec) -> Density {
    build_density_by_transport(
        &ConnectionSource::exact(j.clone(), lambda),
        g,
        &g.center(),
        &DensityOptions::default(),
    )
    .unwrap()
}

/// Composite Simpson rule for `∫_a^b f`, with `n` even.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn gaussian_example(c: &mut Criterion) {
    let z_oracle = simpson(|x| (-x * x).exp(), -5.0, 5.0, 20_000).powi(2);
    c.check(
        (z_oracle - PI).abs() <= 1e-10,
        format!("quadrature oracle Z = {z_oracle:.15}"),
    );

    let g = scenario_grid();
    let j = gaussian();
    let p = transport_density(&j, 1.0, &g);
    let z = p.z();
    c.check(
        (z - PI).abs() <= 1e-6,
        format!("Z = {z:.15} (|Z - pi| = {:.2e})", (z - PI).abs()),
    );

    let worst = g
        .points()
        .zip(p.values())
        .map(|(x, v)| {
            let exact = (-x[0] * x[0] - x[1] * x[1]).exp() / z_oracle;
            ((v - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    c.check(
        worst <= 1e-9,
        format!("nodewise relative error {worst:.2e}"),
    );

    for level in [0.5, 1.0, 2.0] {
        let curves = trace_level_set(&j, &g, level, &LevelSetOptions::default()).unwrap();
        let r = level.sqrt();
        let deviation = curves
            .iter()
            .flat_map(|k| k.vertices())
            .map(|v| (v[0].hypot(v[1]) - r).abs())
            .fold(0.0, f64::max);
        let closed = !curves.is_empty() && curves.iter().all(|k| k.is_closed());
        c.check(
            closed && deviation <= 1e-6,
            format!(
                "level {level}: {} closed curve(s), radial deviation {deviation:.2e}",
                curves.len()
            ),
        );
    }
}

fn multiplier_fit(c: &mut Criterion) {
    let x2 = simpson(|x| x * x * (-x * x).exp(), -5.0, 5.0, 20_000);
    let x0 = simpson(|x| (-x * x).exp(), -5.0, 5.0, 20_000);
    let moment = 2.0 * x2 / x0;
    c.check(
        (moment - 1.0).abs() <= 1e-9,
        format!("quadrature oracle E[J] at lambda = 1: {moment:.15}"),
    );

    let g = scenario_grid();
    let cs = ConstraintSet::parse(2, &[("x1^2 + x2^2", 0.0, Some(1.0))]).unwrap();
    let (report, fitted) = fit_multipliers(&cs, &g, 1e-12, 100).unwrap();
    let lambda = report.lambda[0];
    c.check(
        report.converged && (lambda - 1.0).abs() <= 1e-8,
        format!(
            "lambda = {lambda:.15} after {} iterations",
            report.iterations
        ),
    );
    let rel = fitted.max_relative_error(&transport_density(&gaussian(), 1.0, &g));
    c.check(
        rel <= 1e-8,
        format!("fitted vs transport density: {rel:.2e} relative"),
    );
}

fn gauge_invariance(c: &mut Criterion) {
    let g = scenario_grid();
    type Pair<'a> = (&'a [(&'a str, f64)], &'a str, f64);
    let pairs: [Pair; 6] = [
        (&[("x1^2 + x2^2", 1.0)], "x1", 0.5),
        (&[("x1^2 + x2^2", 1.0)], "x1^2 - x2", 0.3),
        (&[("x1^2", 0.5), ("x2^2", 2.0)], "x1*x2", 0.2),
        (&[("x1^2 + x2^2", 1.0), ("x1", 0.5)], "cos(x1)", 1.0),
        (&[("x1^4 + x2^2", 0.3)], "sin(x2) + x1^2", 0.7),
        (&[("x1^2 + x2^2", 1.0)], "3", 2.0),
    ];
    for (constraints, j_prime, lambda_prime) in pairs {
        let items: Vec<(&str, f64, Option<f64>)> =
            constraints.iter().map(|&(e, l)| (e, l, None)).collect();
        let cs = ConstraintSet::parse(2, &items).unwrap();
        let p = el_density(&cs, &g).unwrap();
        let jp = Expr::parse(j_prime, 2).unwrap();
        let r = gauge_invariance_check(&p, &cs, &jp, lambda_prime, 5).unwrap();
        let gap = (r.residual_before - r.residual_after).abs();
        c.check(
            r.winner_before == r.winner_after && gap <= 1e-8,
            format!(
                "gauge {j_prime} x {lambda_prime}: argmax {} -> {}, residual gap {gap:.2e}",
                r.winner_before, r.winner_after
            ),
        );
    }
}

fn certificate(c: &mut Criterion) {
    let g = scenario_grid();
    let tol = CertificateTolerances::default();
    let parse = |s: &[&str]| {
        s.iter()
            .map(|e| Expr::parse(e, 2).unwrap())
            .collect::<Vec<_>>()
    };

    let cert = certify_stationarity(&parse(&["-2*x1", "-2*x2"]), 1.0, 1.0, &g, tol, 0).unwrap();
    c.check(
        cert.verdict == Verdict::StationarySolvable
            && cert.curvature_max <= 1e-8
            && cert.path_spread.is_some_and(|s| s <= 1e-8)
            && cert.fp_residual.is_some_and(|r| r <= 1e-4),
        format!(
            "gradient drift: {:?}, curvature {:.2e}, path spread {:.2e}, FP residual {:.2e}",
            cert.verdict,
            cert.curvature_max,
            cert.path_spread.unwrap_or(f64::NAN),
            cert.fp_residual.unwrap_or(f64::NAN)
        ),
    );

    let cert =
        certify_stationarity(&parse(&["-2*x1 + x2", "-2*x2 - x1"]), 1.0, 1.0, &g, tol, 0).unwrap();
    c.check(
        cert.verdict == Verdict::NotSolvable && (cert.curvature_max - 2.0).abs() <= 1e-6,
        format!(
            "skew drift: {:?}, curvature {:.12}",
            cert.verdict, cert.curvature_max
        ),
    );
}

fn three_witnesses(c: &mut Criterion) {
    let j = gaussian();
    let g = scenario_grid();
    let target = transport_density(&j, 1.0, &g);
    let sample_every = 200;
    let cfg = FPConfig {
        drift: Drift::gradient(j.clone(), 1.0),
        diffusion: 1.0,
        dt: 0.5 * stability_bound(&g, 1.0),
        t_final: 5.0,
        sample_every,
    };
    let started = Instant::now();
    let traj = evolve_fp(&Density::uniform(g.clone()), &cfg).unwrap();
    let l1 = traj
        .last()
        .density
        .field
        .l1_distance(&target.field)
        .unwrap();
    c.check(
        l1 <= 1e-3,
        format!(
            "FP: {} steps of {:.3e} in {:.1} s, L1 = {l1:.2e}",
            traj.steps,
            traj.dt,
            started.elapsed().as_secs_f64()
        ),
    );

    let energies: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| s.free_energy.unwrap())
        .collect();
    let worst_rise = energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-10 * sample_every as f64;
    c.check(
        worst_rise <= slack,
        format!(
            "free energy over {} samples: largest increase {worst_rise:.2e} (slack {slack:.0e})",
            energies.len()
        ),
    );

    let hist_grid = GridSpec::cube(2, -5.0, 5.0, 51).unwrap();
    let lcfg = LangevinConfig {
        lambda: 1.0,
        diffusion: 1.0,
        particles: 1_000_000,
        dt: 1e-3,
        t_final: 10.0,
        seed: 2024,
    };
    let started = Instant::now();
    let run = langevin_sample(&j, &lcfg, &hist_grid).unwrap();
    let l1 = run
        .histogram
        .field
        .l1_distance(&transport_density(&j, 1.0, &hist_grid).field)
        .unwrap();
    c.check(
        l1 <= 0.03,
        format!(
            "Langevin: 1e6 particles x {} steps in {:.1} s, histogram L1 = {l1:.4} on 51x51",
            run.steps,
            started.elapsed().as_secs_f64()
        ),
    );
}

fn run_property<S: Strategy>(
    c: &mut Criterion,
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Check,
) where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let outcome = runner.run(&strategy, test);
    c.check(
        outcome.is_ok(),
        format!(
            "{name} ({cases} cases){}",
            outcome.err().map(|e| format!(": {e}")).unwrap_or_default()
        ),
    );
}

const SAMPLE_CONFIG: &str = "[problem]
dimension = 2
[grid]
lower = -5
upper = 5
nodes = 41
[constraints]
list = [{\"expr\": \"x1^2 + x2^2\", \"lambda\": 1}]
[dynamics]
dt = 1e-3
T = 0.5
particles = 3000
seed = 5
";

fn cli_sample(config: &Path, out: &Path) -> Vec<Vec<u8>> {
    let status = Command::new(env!("CARGO_BIN_EXE_congeo"))
        .args(["sample", "--threads", "1", "--config"])
        .arg(config)
        .arg("--output")
        .arg(out)
        .env_remove("OUTPUT_DIR")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    [
        "sample.json",
        "histogram.csv",
        "histogram.json",
        "positions.csv",
    ]
    .iter()
    .map(|f| std::fs::read(out.join(f)).unwrap())
    .collect()
}

fn properties(c: &mut Criterion) {
    let points = proptest::collection::vec(proptest::collection::vec(-4f64..4.0, 3), 100);
    run_property(
        c,
        "printed expressions reparse bit-identically",
        256,
        (node_strategy(3), points),
        |(n, p)| check_round_trip(n, &p),
    );
    run_property(
        c,
        "derivative vs central difference, O(h^2) ratio in [50, 200]",
        256,
        derivative_strategy(),
        check_derivative_order,
    );
    run_property(
        c,
        "exact connections are flat",
        64,
        flatness_strategy(),
        check_flat,
    );
    run_property(
        c,
        "transport concatenation homomorphism to 1e-12",
        256,
        concat_strategy(),
        check_concatenation,
    );
    run_property(
        c,
        "closed-loop transport = 1 +- 1e-9",
        256,
        loop_strategy(),
        check_closed_loop,
    );
    run_property(
        c,
        "transport density solves dp = -lambda dJ p at O(h^2)",
        16,
        quadratic_strategy(),
        check_gradient_equation,
    );
    run_property(
        c,
        "FP mass conservation 1e-10 per unit time",
        16,
        mass_strategy(),
        check_mass,
    );

    let tmp = tempfile::TempDir::new().unwrap();
    let config = tmp.path().join("sample.ini");
    std::fs::write(&config, SAMPLE_CONFIG).unwrap();
    let first = cli_sample(&config, &tmp.path().join("a"));
    let second = cli_sample(&config, &tmp.path().join("b"));
    c.check(
        first == second,
        "congeo sample --threads 1 outputs byte-identical across runs",
    );

    let g = GridSpec::cube(2, -5.0, 5.0, 41).unwrap();
    let lcfg = LangevinConfig {
        lambda: 1.0,
        diffusion: 1.0,
        particles: 5000,
        dt: 1e-3,
        t_final: 1.0,
        seed: 99,
    };
    let a = langevin_sample(&gaussian(), &lcfg, &g).unwrap();
    let b = langevin_sample(&gaussian(), &lcfg, &g).unwrap();
    let same = a
        .positions
        .iter()
        .zip(&b.positions)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    c.check(
        same && a.positions.len() == b.positions.len(),
        "library sampler bit-identical at a fixed seed",
    );
}

fn main() {
    type Entry = (&'static str, Option<Duration>, fn(&mut Criterion));
    let criteria: [Entry; 6] = [
        (
            "1 Gaussian closed form",
            Some(Duration::from_secs(10)),
            gaussian_example,
        ),
        (
            "2 multiplier fit",
            Some(Duration::from_secs(30)),
            multiplier_fit,
        ),
        (
            "3 gauge invariance",
            Some(Duration::from_secs(10)),
            gauge_invariance,
        ),
        (
            "4 stationarity certificate",
            Some(Duration::from_secs(20)),
            certificate,
        ),
        (
            "5 three-witness agreement",
            Some(Duration::from_secs(300)),
            three_witnesses,
        ),
        ("6 property suites", None, properties),
    ];
    let mut failed = 0;
    for (name, budget, body) in criteria {
        let mut c = Criterion::default();
        let started = Instant::now();
        body(&mut c);
        let elapsed = started.elapsed();
        if let Some(budget) = budget {
            c.check(
                elapsed < budget,
                format!(
                    "runtime {:.1} s (budget {} s)",
                    elapsed.as_secs_f64(),
                    budget.as_secs()
                ),
            );
        }
        let verdict = if c.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        failed += usize::from(!c.failures.is_empty());
        println!(
            "{verdict} criterion {name} ({:.1} s)",
            elapsed.as_secs_f64()
        );
        for note in &c.notes {
            let mark = if c.failures.contains(note) {
                "!!"
            } else {
                "  "
            };
            println!("    {mark} {note}");
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
