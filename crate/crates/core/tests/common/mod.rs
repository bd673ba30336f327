//! Property checks shared by the proptest suite and the acceptance runner.

#![allow(dead_code)]

use congeo_core::density::Density;
use congeo_core::dynamics::{evolve_fp, stability_bound, Drift, FPConfig};
use congeo_core::expr::{Expr, Func, Node};
use congeo_core::geometry::{connection_form, curvature};
use congeo_core::grid::{GridSpec, ScalarField};
use congeo_core::transport::{
    build_density_by_transport, parallel_transport, ConnectionSource, DensityOptions, Polyline,
    Quadrature,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Check = Result<(), TestCaseError>;

pub fn node_strategy(dim: usize) -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        (0..dim).prop_map(Node::Var),
        (-1e3f64..1e3).prop_map(Node::Const),
        prop_oneof![Just(0.1), Just(1e-7), Just(3.0), Just(2.5e10)].prop_map(Node::Const),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        let b = |n: Node| Box::new(n);
        prop_oneof![
            inner.clone().prop_map(move |a| Node::Neg(b(a))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Node::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Node::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Node::Mul(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Node::Div(b(x), b(y))),
            (inner.clone(), -3i32..5).prop_map(move |(x, k)| Node::Pow(b(x), k)),
            (
                inner,
                prop_oneof![
                    Just(Func::Exp),
                    Just(Func::Ln),
                    Just(Func::Sin),
                    Just(Func::Cos)
                ]
            )
                .prop_map(move |(x, f)| Node::Call(f, b(x))),
        ]
    })
}

fn same_outcome(
    a: Result<f64, impl std::fmt::Debug>,
    b: Result<f64, impl std::fmt::Debug>,
) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.to_bits() == y.to_bits(),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

pub fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 2)
}

pub fn check_round_trip(node: Node, points: &[Vec<f64>]) -> Check {
    let e = Expr::from_node(node, 3);
    let text = e.to_string();
    let back =
        Expr::parse(&text, 3).map_err(|err| TestCaseError::fail(format!("{text:?}: {err}")))?;
    for x in points {
        prop_assert!(
            same_outcome(e.evaluate(x), back.evaluate(x)),
            "{text} at {x:?}"
        );
    }
    Ok(())
}

/// Smooth potential with non-vanishing third derivatives.
fn smooth(c: [f64; 3], a: [f64; 2]) -> Expr {
    let src = format!(
        "{}*sin({}*x1 + {}*x2) + {}*exp({}*x1 - {}*x2) + {}*x1^3*x2",
        c[0],
        a[0],
        a[1],
        c[1],
        0.5 * a[1],
        0.5 * a[0],
        c[2]
    );
    Expr::parse(&src, 2).unwrap()
}

fn central(e: &Expr, x: &[f64], axis: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[axis] += h;
    m[axis] -= h;
    (e.evaluate(&p).unwrap() - e.evaluate(&m).unwrap()) / (2.0 * h)
}

pub fn derivative_strategy() -> impl Strategy<Value = ([f64; 3], [f64; 2], Vec<f64>, usize)> {
    (
        prop::array::uniform3(0.5f64..2.0),
        prop::array::uniform2(0.5f64..2.0),
        point(),
        0usize..2,
    )
}

/// Central differences at `h = 1e-3` and `1e-4` must shrink the error by
/// 100 within a factor of two.
pub fn check_derivative_order((c, a, x, axis): ([f64; 3], [f64; 2], Vec<f64>, usize)) -> Check {
    let e = smooth(c, a);
    let exact = e.differentiate(axis).evaluate(&x).unwrap();
    let coarse = (central(&e, &x, axis, 1e-3) - exact).abs();
    let fine = (central(&e, &x, axis, 1e-4) - exact).abs();
    // K·h² with K bounded by the third derivatives on the sampled box
    prop_assert!(coarse <= 50.0 * 1e-6, "{coarse}");
    // the ratio is only meaningful well above rounding noise
    prop_assume!(coarse > 1e-8);
    let ratio = coarse / fine;
    prop_assert!(
        (50.0..=200.0).contains(&ratio),
        "ratio {ratio} ({coarse:e} / {fine:e})"
    );
    Ok(())
}

/// Cubic polynomial in `n` variables from up to 20 coefficients.
fn cubic(n: usize, c: &[f64]) -> Expr {
    let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let mut monomials = vec!["1".to_string()];
    for i in 0..n {
        monomials.push(vars[i].clone());
        for j in i..n {
            monomials.push(format!("{}*{}", vars[i], vars[j]));
            for k in j..n {
                monomials.push(format!("{}*{}*{}", vars[i], vars[j], vars[k]));
            }
        }
    }
    let terms: Vec<String> = monomials
        .iter()
        .zip(c)
        .map(|(m, c)| format!("({c})*{m}"))
        .collect();
    Expr::parse(&terms.join(" + "), n).unwrap()
}

pub fn flatness_strategy() -> impl Strategy<Value = (usize, Vec<f64>, f64)> {
    (
        2usize..=3,
        prop::collection::vec(-2f64..2.0, 20),
        0.1f64..3.0,
    )
}

pub fn check_flat((n, c, lambda): (usize, Vec<f64>, f64)) -> Check {
    let j = cubic(n, &c);
    let g = GridSpec::cube(n, -2.0, 2.0, if n == 2 { 41 } else { 13 }).unwrap();
    let a = connection_form(&j, lambda, &g).unwrap();
    let report = curvature(&a, 1e-6);
    prop_assert!(report.flat, "max {}", report.max_curvature);
    Ok(())
}

fn quartic_bowl(c: [f64; 5]) -> Expr {
    Expr::parse(
        &format!(
            "{}*x1^2 + {}*x2^2 + {}*x1*x2 + {}*x1^3 + {}*x2^4",
            c[0], c[1], c[2], c[3], c[4]
        ),
        2,
    )
    .unwrap()
}

type Concat = ([f64; 5], [Vec<f64>; 4], f64);

pub fn concat_strategy() -> impl Strategy<Value = Concat> {
    (
        prop::array::uniform5(-1f64..1.0),
        [point(), point(), point(), point()],
        0.1f64..2.0,
    )
}

pub fn check_concatenation((c, [a, m, b, d], lambda): Concat) -> Check {
    prop_assume!(a != m && m != b && b != d);
    let src = ConnectionSource::exact(quartic_bowl(c), lambda);
    let p1 = Polyline::open(vec![a, m, b.clone()]).unwrap();
    let p2 = Polyline::open(vec![b, d]).unwrap();
    let f1 = parallel_transport(&src, &p1, Quadrature::Gauss4)
        .unwrap()
        .factor;
    let f2 = parallel_transport(&src, &p2, Quadrature::Gauss4)
        .unwrap()
        .factor;
    let f12 = parallel_transport(&src, &p1.concat(&p2).unwrap(), Quadrature::Gauss4)
        .unwrap()
        .factor;
    prop_assert!(f12 > 0.0);
    prop_assert!(
        ((f12 - f1 * f2) / f12).abs() <= 1e-12,
        "{f12} vs {}",
        f1 * f2
    );
    Ok(())
}

pub fn loop_strategy() -> impl Strategy<Value = ([f64; 5], Vec<Vec<f64>>, f64)> {
    (
        prop::array::uniform5(-1f64..1.0),
        prop::collection::vec(point(), 3..12),
        0.1f64..2.0,
    )
}

pub fn check_closed_loop((c, vertices, lambda): ([f64; 5], Vec<Vec<f64>>, f64)) -> Check {
    let loop_ = Polyline::closed(vertices);
    prop_assume!(loop_.is_ok());
    let src = ConnectionSource::exact(quartic_bowl(c), lambda);
    let f = parallel_transport(&src, &loop_.unwrap(), Quadrature::Gauss4)
        .unwrap()
        .factor;
    prop_assert!((f - 1.0).abs() <= 1e-9, "{f}");
    Ok(())
}

/// Largest `|∂_i p + λ ∂_i J p|`, relative to the peak, with `∂_i p` taken
/// by central differences on an `n × n` grid over `[-3, 3]²`.
fn gradient_equation_error(j: &Expr, lambda: f64, nodes: usize) -> f64 {
    let g = GridSpec::cube(2, -3.0, 3.0, nodes).unwrap();
    let src = ConnectionSource::exact(j.clone(), lambda);
    let p = build_density_by_transport(&src, &g, &g.center(), &DensityOptions::default()).unwrap();
    let h = g.spacings()[0];
    let dj = j.gradient();
    let peak = p.field.max();
    let at = |a: usize, b: usize| p.values()[a * nodes + b];
    let mut worst = 0.0f64;
    for i in 1..nodes - 1 {
        for k in 1..nodes - 1 {
            let x = [g.axes()[0].coord(i), g.axes()[1].coord(k)];
            let fd = [
                (at(i + 1, k) - at(i - 1, k)) / (2.0 * h),
                (at(i, k + 1) - at(i, k - 1)) / (2.0 * h),
            ];
            for (axis, fd) in fd.iter().enumerate() {
                let rhs = -lambda * dj[axis].evaluate(&x).unwrap() * at(i, k);
                worst = worst.max((fd - rhs).abs() / peak);
            }
        }
    }
    worst
}

pub fn quadratic_strategy() -> impl Strategy<Value = [f64; 5]> {
    (
        0.5f64..1.5,
        0.5f64..1.5,
        -0.4f64..0.4,
        -0.5f64..0.5,
        0.5f64..1.5,
    )
        .prop_map(|(a, b, c, d, l)| [a, b, c, d, l])
}

pub fn check_gradient_equation([a, b, c, d, lambda]: [f64; 5]) -> Check {
    let j = Expr::parse(&format!("{a}*x1^2 + {b}*x2^2 + {c}*x1*x2 + {d}*x1"), 2).unwrap();
    let coarse = gradient_equation_error(&j, lambda, 61);
    let fine = gradient_equation_error(&j, lambda, 121);
    prop_assert!(coarse <= 10.0 * 0.1f64.powi(2), "{coarse}");
    let ratio = coarse / fine;
    prop_assert!(
        (2.0..=8.0).contains(&ratio),
        "halving h changed the error by {ratio}"
    );
    Ok(())
}

pub fn mass_strategy() -> impl Strategy<Value = (Vec<f64>, [f64; 3])> {
    (
        prop::collection::vec(0.1f64..2.0, 21 * 21),
        (0.2f64..1.5, 0.2f64..1.5, -0.3f64..0.3).prop_map(|(a, b, c)| [a, b, c]),
    )
}

/// Mass drift within 1e-10 per unit time and a non-increasing free energy
/// from a random positive start.
pub fn check_mass((seed_values, [a, b, c]): (Vec<f64>, [f64; 3])) -> Check {
    let g = GridSpec::cube(2, -3.0, 3.0, 21).unwrap();
    let raw = ScalarField::new(g.clone(), seed_values).unwrap();
    let mass = raw.integral();
    let p0 = Density {
        field: ScalarField::new(g.clone(), raw.values().iter().map(|v| v / mass).collect())
            .unwrap(),
        ..Density::uniform(g.clone())
    };
    let j = Expr::parse(&format!("{a}*x1^2 + {b}*x2^2 + {c}*x1*x2"), 2).unwrap();
    let t_final = 0.5;
    let sample_every = 50;
    let cfg = FPConfig {
        drift: Drift::gradient(j, 1.0),
        diffusion: 1.0,
        dt: 0.25 * stability_bound(&g, 1.0),
        t_final,
        sample_every,
    };
    let traj = evolve_fp(&p0, &cfg).unwrap();
    for s in &traj.snapshots {
        prop_assert!(
            (s.mass - 1.0).abs() <= 1e-10 * s.time.max(1.0),
            "t={} mass={}",
            s.time,
            s.mass
        );
        prop_assert!(s.min >= 0.0, "min {}", s.min);
    }
    let energies: Vec<f64> = traj
        .snapshots
        .iter()
        .map(|s| s.free_energy.unwrap())
        .collect();
    for w in energies.windows(2) {
        prop_assert!(w[1] <= w[0] + 1e-10 * sample_every as f64);
    }
    Ok(())
}
