//! Euler–Maruyama Langevin sampler with reflecting walls.
//!
//! Particle `i` draws from ChaCha8 stream `i` under the run seed, so a
//! particle's path does not depend on how particles are scheduled.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::DynamicsError;
use crate::density::{Density, Provenance};
use crate::expr::{Expr, Program};
use crate::grid::{GridSpec, ScalarField};

#[derive(Clone, Debug, PartialEq)]
pub struct LangevinConfig {
    pub lambda: f64,
    pub diffusion: f64,
    pub particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LangevinResult {
    /// Final positions, particle-major (`particles × dimension`).
    pub positions: Vec<f64>,
    pub dimension: usize,
    pub steps: usize,
    /// Nearest-node histogram normalized so its trapezoid integral is one.
    pub histogram: Density,
}

impl LangevinResult {
    pub fn position(&self, particle: usize) -> &[f64] {
        &self.positions[particle * self.dimension..(particle + 1) * self.dimension]
    }
}

/// Largest stable step scale: the relaxation time `1 / (λ max|∂ᵢᵢJ|)` over
/// the grid nodes, or the diffusive crossing time of the box when there is
/// no confinement.
fn confinement_scale(
    potential: &Expr,
    lambda: f64,
    diffusion: f64,
    grid: &GridSpec,
) -> Result<f64, DynamicsError> {
    let n = grid.dimension();
    let second: Vec<Program> = (0..n)
        .map(|i| potential.differentiate(i).differentiate(i).compile())
        .collect();
    let mut x = vec![0.0; n];
    let mut curvature = 0.0f64;
    for flat in 0..grid.len() {
        grid.point_into(flat, &mut x);
        for s in &second {
            let v = s.eval(&x);
            if !v.is_finite() {
                return Err(DynamicsError::InvalidParameter(format!(
                    "∂²J is not finite at {x:?}"
                )));
            }
            curvature = curvature.max(v.abs());
        }
    }
    let side = grid
        .axes()
        .iter()
        .map(|a| a.upper - a.lower)
        .fold(f64::INFINITY, f64::min);
    let diffusive = side * side / (2.0 * diffusion);
    let stiffness = lambda.abs() * curvature;
    Ok(if stiffness > 0.0 {
        (1.0 / stiffness).min(diffusive)
    } else {
        diffusive
    })
}

/// Maps a 64-bit draw to the midpoints of a 2^-52 lattice in (0, 1).
fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Particles advanced together; each keeps its own stream, so grouping
/// changes nothing but speed.
const LANES: usize = 16;

struct Walker<'a> {
    gradient: &'a [Program],
    n: usize,
    lower: [f64; 3],
    upper: [f64; 3],
    far_lower: [f64; 3],
    far_upper: [f64; 3],
    drift_scale: f64,
    noise_scale: f64,
    steps: usize,
    seed: u64,
    particles: usize,
}

impl Walker<'_> {
    /// Runs particles `block*LANES ..` and returns their final positions.
    #[allow(clippy::needless_range_loop)]
    fn run_block(&self, block: usize) -> Result<Vec<[f64; 3]>, DynamicsError> {
        let n = self.n;
        let first = block * LANES;
        let active = LANES.min(self.particles - first);
        let mut rngs: Vec<ChaCha8Rng> = (0..LANES)
            .map(|l| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream((first + l) as u64);
                rng
            })
            .collect();
        let mut x = [[0.0f64; LANES]; 3];
        for l in 0..LANES {
            for d in 0..n {
                x[d][l] =
                    self.lower[d] + open_unit(rngs[l].next_u64()) * (self.upper[d] - self.lower[d]);
            }
        }
        let mut g = [[0.0f64; LANES]; 3];
        let mut stack = Vec::new();
        let mut z = [0.0f64; LANES];
        for _ in 0..self.steps {
            for d in 0..n {
                self.gradient[d].eval_lanes(&x[..n], &mut stack, &mut g[d]);
            }
            for d in 0..n {
                for (z, rng) in z.iter_mut().zip(rngs.iter_mut()) {
                    *z = StandardNormal.sample(rng);
                }
                let mut escaped = false;
                for l in 0..LANES {
                    let mut y = x[d][l] - self.drift_scale * g[d][l] + self.noise_scale * z[l];
                    // NaN fails both comparisons and counts as an escape
                    escaped |= !(y >= self.far_lower[d] && y <= self.far_upper[d]) && l < active;
                    if y < self.lower[d] {
                        y = 2.0 * self.lower[d] - y;
                    } else if y > self.upper[d] {
                        y = 2.0 * self.upper[d] - y;
                    }
                    x[d][l] = y;
                }
                if escaped {
                    let l = (0..active)
                        .find(|&l| !(x[d][l] >= self.lower[d] && x[d][l] <= self.upper[d]))
                        .unwrap_or(0);
                    return Err(DynamicsError::Escape {
                        particle: first + l,
                        point: (0..n).map(|k| x[k][l]).collect(),
                    });
                }
            }
        }
        Ok((0..active).map(|l| [x[0][l], x[1][l], x[2][l]]).collect())
    }
}

/// Runs `cfg.particles` independent walkers of
/// `dX = -λ∇J dt + √(2D) dW` from uniform starts in the grid box.
pub fn langevin_sample(
    potential: &Expr,
    cfg: &LangevinConfig,
    grid: &GridSpec,
) -> Result<LangevinResult, DynamicsError> {
    let n = grid.dimension();
    if potential.dimension() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: potential.dimension(),
        });
    }
    if cfg.particles == 0 {
        return Err(DynamicsError::InvalidParameter(
            "need at least one particle".into(),
        ));
    }
    if !(cfg.diffusion > 0.0 && cfg.diffusion.is_finite()) || !cfg.lambda.is_finite() {
        return Err(DynamicsError::InvalidParameter(
            "λ must be finite and D positive".into(),
        ));
    }
    if !(cfg.dt > 0.0) || !(cfg.t_final >= cfg.dt) || !cfg.t_final.is_finite() {
        return Err(DynamicsError::InvalidParameter(format!(
            "need 0 < dt ≤ T, got dt={} T={}",
            cfg.dt, cfg.t_final
        )));
    }
    let bound = 1e-2 * confinement_scale(potential, cfg.lambda, cfg.diffusion, grid)?;
    if cfg.dt > bound {
        return Err(DynamicsError::Stability { dt: cfg.dt, bound });
    }
    let steps = (cfg.t_final / cfg.dt - 1e-9).ceil() as usize;
    let gradient: Vec<Program> = potential.gradient().iter().map(|d| d.compile()).collect();
    let mut walker = Walker {
        gradient: &gradient,
        n,
        lower: [0.0; 3],
        upper: [0.0; 3],
        far_lower: [0.0; 3],
        far_upper: [0.0; 3],
        drift_scale: cfg.lambda * cfg.dt,
        noise_scale: (2.0 * cfg.diffusion * cfg.dt).sqrt(),
        steps,
        seed: cfg.seed,
        particles: cfg.particles,
    };
    for (d, a) in grid.axes().iter().enumerate() {
        let width = a.upper - a.lower;
        walker.lower[d] = a.lower;
        walker.upper[d] = a.upper;
        walker.far_lower[d] = a.lower - 0.5 * width;
        walker.far_upper[d] = a.upper + 0.5 * width;
    }

    let blocks = cfg.particles.div_ceil(LANES);
    let finals: Vec<Result<Vec<[f64; 3]>, DynamicsError>> = (0..blocks)
        .into_par_iter()
        .map(|b| walker.run_block(b))
        .collect();
    let mut positions = Vec::with_capacity(cfg.particles * n);
    let mut counts = vec![0u64; grid.len()];
    for block in finals {
        for x in block? {
            positions.extend_from_slice(&x[..n]);
            counts[grid.nearest_node(&x[..n])] += 1;
        }
    }
    let total = cfg.particles as f64;
    let values = counts
        .iter()
        .zip(grid.trapezoid_weights())
        .map(|(c, w)| *c as f64 / (total * w))
        .collect();
    let histogram = Density {
        field: ScalarField::new(grid.clone(), values)?,
        log_z: 0.0,
        provenance: Provenance::Sampled,
        lambda: vec![cfg.lambda],
        basepoint: None,
    };
    Ok(LangevinResult {
        positions,
        dimension: n,
        steps,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64, particles: usize, t: f64, seed: u64) -> LangevinConfig {
        LangevinConfig {
            lambda,
            diffusion: 1.0,
            particles,
            dt: 1e-3,
            t_final: t,
            seed,
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let g = GridSpec::cube(2, -3.0, 3.0, 13).unwrap();
        let j = Expr::parse("x1^2 + x2^2", 2).unwrap();
        let a = langevin_sample(&j, &cfg(1.0, 200, 0.2, 9), &g).unwrap();
        let b = langevin_sample(&j, &cfg(1.0, 200, 0.2, 9), &g).unwrap();
        assert_eq!(a.positions, b.positions);
        let c = langevin_sample(&j, &cfg(1.0, 200, 0.2, 10), &g).unwrap();
        assert_ne!(a.positions, c.positions);
        assert_eq!(a.steps, 200);
    }

    #[test]
    fn histogram_is_normalized_and_positions_stay_inside() {
        let g = GridSpec::cube(1, -1.0, 1.0, 21).unwrap();
        let r =
            langevin_sample(&Expr::parse("0", 1).unwrap(), &cfg(0.0, 2000, 0.5, 1), &g).unwrap();
        assert!((r.histogram.mass() - 1.0).abs() < 1e-12);
        assert!(r.positions.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(r.position(3).len(), 1);
    }

    #[test]
    fn particle_paths_ignore_scheduling() {
        let g = GridSpec::cube(1, -2.0, 2.0, 11).unwrap();
        let j = Expr::parse("x1^2", 1).unwrap();
        let all = langevin_sample(&j, &cfg(1.0, 50, 0.1, 4), &g).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let threaded = pool
            .install(|| langevin_sample(&j, &cfg(1.0, 50, 0.1, 4), &g))
            .unwrap();
        assert_eq!(all.positions, threaded.positions);
    }

    #[test]
    fn step_must_resolve_confinement() {
        let g = GridSpec::cube(1, -2.0, 2.0, 11).unwrap();
        let j = Expr::parse("x1^2", 1).unwrap();
        let err = langevin_sample(
            &j,
            &LangevinConfig {
                dt: 0.01,
                ..cfg(1.0, 10, 1.0, 0)
            },
            &g,
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::Stability { .. }));
    }

    #[test]
    fn open_unit_never_hits_the_ends() {
        assert!(open_unit(0) > 0.0);
        assert!(open_unit(u64::MAX) < 1.0);
    }

    #[test]
    fn ornstein_uhlenbeck_variance() {
        let g = GridSpec::cube(1, -6.0, 6.0, 61).unwrap();
        let j = Expr::parse("x1^2", 1).unwrap();
        let r = langevin_sample(&j, &cfg(1.0, 20_000, 4.0, 2), &g).unwrap();
        let var = r.positions.iter().map(|x| x * x).sum::<f64>() / r.positions.len() as f64;
        // stationary variance D/(2λ) = 0.5; standard error ~ 0.005
        assert!((var - 0.5).abs() < 0.025, "{var}");
    }
}
