//! One-dimensional finite-difference benchmark solver and comparison
//! metrics.
//!
//! On a uniform periodic grid the adjoint equation is solved by Newton's
//! method with a mean-zero constraint handled through a bordered linear
//! system, and the density follows from the Gibbs closure
//! `ν ∝ e^{2(b0²p + b̃)}`, which is exact for gradient drifts on the
//! torus. Coupled problems iterate the two steps with damping.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;
use crate::model::{grid_mean, Coupling, ModelError, ProblemKind, ProblemSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the finite-difference solver is one-dimensional (got d = {0})")]
    NotOneDimensional(usize),
    #[error("Newton iteration failed to converge (residual {residual:.3e} after {iterations} steps)")]
    NewtonStalled { residual: f64, iterations: usize },
    #[error("outer fixed point failed to converge (change {change:.3e} after {iterations} sweeps)")]
    OuterStalled { change: f64, iterations: usize },
    #[error("linear solve failed at Newton step {0}")]
    Singular(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    /// Grid points per period.
    pub m: usize,
    /// Damping of the density update in the outer fixed point.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Sup-norm tolerance on the density change.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max")]
    pub newton_max: usize,
}

fn default_damping() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_outer() -> usize {
    500
}
fn default_newton_tol() -> f64 {
    1e-10
}
fn default_newton_max() -> usize {
    50
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            m: 512,
            damping: default_damping(),
            tol: default_tol(),
            max_outer: default_max_outer(),
            newton_tol: default_newton_tol(),
            newton_max: default_newton_max(),
        }
    }
}

/// Grid solution of the coupled system.
#[derive(Debug, Clone)]
pub struct FdSolution {
    pub m: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: f64,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
}

impl FdSolution {
    fn interp(&self, values: &[f64], x: f64) -> f64 {
        let m = self.m as f64;
        let t = (x.rem_euclid(1.0)) * m;
        let j = t.floor() as usize % self.m;
        let frac = t - t.floor();
        let j1 = (j + 1) % self.m;
        values[j] * (1.0 - frac) + values[j1] * frac
    }

    /// Linear interpolation of `p`, periodic in `x`.
    pub fn p_at(&self, x: f64) -> f64 {
        self.interp(&self.p, x)
    }

    /// Linear interpolation of `ν`, periodic in `x`.
    pub fn nu_at(&self, x: f64) -> f64 {
        self.interp(&self.nu, x)
    }
}

fn periodic_dx(values: &[f64], h: f64) -> Vec<f64> {
    let m = values.len();
    (0..m)
        .map(|j| (values[(j + 1) % m] - values[(j + m - 1) % m]) / (2.0 * h))
        .collect()
}

/// Right side of the adjoint equation: `f̃₀ + g(ν) + pairwise + D_μ-terms`.
fn rhs(
    spec: &ProblemSpec,
    x: &[f64],
    nu: &[f64],
    f0: &[f64],
) -> Result<Vec<f64>, BenchError> {
    let m = x.len();
    let mut r = vec![0.0; m];
    // Pairwise slots by the trapezoidal rule over the grid.
    let (pair_h, pair_dmu): (Vec<f64>, Vec<f64>) = match &spec.f_tilde2 {
        None => (vec![0.0; m], vec![0.0; m]),
        Some(kernel) => {
            let mut ph = vec![0.0; m];
            let mut pd = vec![0.0; m];
            for j in 0..m {
                let xj = [x[j]];
                let mut sh = 0.0;
                let mut sd = 0.0;
                for i in 0..m {
                    let xi = [x[i]];
                    sh += kernel(&xj, &xi) * nu[i];
                    sd += kernel(&xi, &xj) * nu[i];
                }
                ph[j] = sh / m as f64;
                pd[j] = sd / m as f64;
            }
            (ph, pd)
        }
    };
    for j in 0..m {
        let g = spec.local_coupling.g(nu[j])?;
        let dmu = match spec.kind {
            ProblemKind::Mfg => 0.0,
            ProblemKind::Mfc => spec.local_coupling.dmu_contribution(nu[j])? + pair_dmu[j],
        };
        r[j] = f0[j] + g + pair_h[j] + dmu;
    }
    Ok(r)
}

/// Newton solve of `½p″ + ½b0²(p′)² + b̃′p′ + λ = r` with `mean(p) = 0`,
/// warm-started from the passed-in state. Returns Newton steps taken.
fn solve_hjb_newton(
    spec: &ProblemSpec,
    cfg: &FdConfig,
    h: f64,
    gb: &[f64],
    r: &[f64],
    p: &mut Vec<f64>,
    lambda: &mut f64,
) -> Result<usize, BenchError> {
    let m = p.len();
    let b0sq = spec.b0 * spec.b0;
    let residual = |p: &[f64], lambda: f64| -> Vec<f64> {
        let dp = periodic_dx(p, h);
        (0..m)
            .map(|j| {
                let d2 = (p[(j + 1) % m] - 2.0 * p[j] + p[(j + m - 1) % m]) / (h * h);
                0.5 * d2 + 0.5 * b0sq * dp[j] * dp[j] + gb[j] * dp[j] + lambda - r[j]
            })
            .collect()
    };

    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt() / (m as f64).sqrt();

    for step in 0..cfg.newton_max {
        let f = residual(p, *lambda);
        let mean_p = p.iter().sum::<f64>() / m as f64;
        let res = norm(&f).max(mean_p.abs());
        if res < cfg.newton_tol {
            return Ok(step);
        }

        // Bordered Jacobian: the PDE block plus the mean constraint.
        let dp = periodic_dx(p, h);
        let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
        for j in 0..m {
            let jp = (j + 1) % m;
            let jm = (j + m - 1) % m;
            let coeff = (b0sq * dp[j] + gb[j]) / (2.0 * h);
            a[(j, jp)] += 0.5 / (h * h) + coeff;
            a[(j, jm)] += 0.5 / (h * h) - coeff;
            a[(j, j)] += -1.0 / (h * h);
            a[(j, m)] = 1.0;
            a[(m, j)] = 1.0 / m as f64;
        }
        let mut b = DVector::<f64>::zeros(m + 1);
        for j in 0..m {
            b[j] = -f[j];
        }
        b[m] = -mean_p;
        let delta = a
            .lu()
            .solve(&b)
            .ok_or(BenchError::Singular(step))?;

        // Backtracking line search on the residual norm.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial_p: Vec<f64> = (0..m).map(|j| p[j] + t * delta[j]).collect();
            let trial_l = *lambda + t * delta[m];
            let trial_res = norm(&residual(&trial_p, trial_l));
            if trial_res <= (1.0 - 1e-4 * t) * res || trial_res < cfg.newton_tol {
                *p = trial_p;
                *lambda = trial_l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Stalling at rounding level counts as converged.
            if res < 1e3 * cfg.newton_tol {
                return Ok(step);
            }
            return Err(BenchError::NewtonStalled {
                residual: res,
                iterations: step,
            });
        }
    }
    let f = residual(p, *lambda);
    let res = norm(&f);
    if res < cfg.newton_tol {
        Ok(cfg.newton_max)
    } else {
        Err(BenchError::NewtonStalled {
            residual: res,
            iterations: cfg.newton_max,
        })
    }
}

/// Density from the Gibbs closure `ν ∝ e^{2(b0²p + b̃)}`, normalized to
/// unit mass on the grid.
fn gibbs_density(b0sq: f64, p: &[f64], bt: &[f64]) -> Vec<f64> {
    let m = p.len();
    let e: Vec<f64> = (0..m).map(|j| 2.0 * (b0sq * p[j] + bt[j])).collect();
    let emax = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = e.iter().map(|v| (v - emax).exp()).collect();
    let z = w.iter().sum::<f64>() / m as f64;
    w.iter().map(|v| v / z).collect()
}

/// Solves the coupled stationary system on a periodic grid. If the outer
/// fixed point diverges at the configured damping, the damping is halved
/// and the sweep restarted, a few times.
pub fn solve_fd(spec: &ProblemSpec, cfg: &FdConfig) -> Result<FdSolution, BenchError> {
    let mut damping = cfg.damping;
    let mut last = None;
    for _ in 0..5 {
        match solve_fd_once(spec, cfg, damping) {
            Ok(sol) => return Ok(sol),
            Err(
                e @ (BenchError::NewtonStalled { .. }
                | BenchError::OuterStalled { .. }
                | BenchError::Singular(_)),
            ) => {
                last = Some(e);
                damping *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

fn solve_fd_once(
    spec: &ProblemSpec,
    cfg: &FdConfig,
    damping: f64,
) -> Result<FdSolution, BenchError> {
    if spec.d != 1 {
        return Err(BenchError::NotOneDimensional(spec.d));
    }
    spec.validate()?;
    let m = cfg.m;
    let h = 1.0 / m as f64;
    let x: Vec<f64> = (0..m).map(|j| j as f64 * h).collect();
    let f0: Vec<f64> = x.iter().map(|&v| spec.f_tilde0.value(&[v])).collect();
    let gb: Vec<f64> = x.iter().map(|&v| spec.b_tilde.grad(&[v])[0]).collect();
    let bt: Vec<f64> = x.iter().map(|&v| spec.b_tilde.value(&[v])).collect();
    let b0sq = spec.b0 * spec.b0;

    let mut nu = vec![1.0; m];
    let mut p = vec![0.0; m];
    let mut lambda = f0.iter().sum::<f64>() / m as f64;
    let mut newton_total = 0;

    let uncoupled = spec.local_coupling == Coupling::None && spec.f_tilde2.is_none();
    for outer in 0..cfg.max_outer {
        let r = rhs(spec, &x, &nu, &f0)?;
        newton_total += solve_hjb_newton(spec, cfg, h, &gb, &r, &mut p, &mut lambda)?;
        let nu_new = gibbs_density(b0sq, &p, &bt);
        let change = nu
            .iter()
            .zip(&nu_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if !change.is_finite() {
            return Err(BenchError::OuterStalled {
                change,
                iterations: outer,
            });
        }
        for (a, b) in nu.iter_mut().zip(&nu_new) {
            *a = (1.0 - damping) * *a + damping * b;
        }
        if change < cfg.tol || uncoupled {
            // One final consistency pass so the reported pair solves the
            // system with the converged density.
            let r = rhs(spec, &x, &nu, &f0)?;
            newton_total += solve_hjb_newton(spec, cfg, h, &gb, &r, &mut p, &mut lambda)?;
            nu = gibbs_density(b0sq, &p, &bt);
            return Ok(FdSolution {
                m,
                x,
                p,
                nu,
                lambda,
                outer_iterations: outer + 1,
                newton_iterations: newton_total,
            });
        }
    }
    Err(BenchError::OuterStalled {
        change: f64::NAN,
        iterations: cfg.max_outer,
    })
}

pub fn write_fd_csv(path: &Path, sol: &FdSolution) -> Result<(), BenchError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "x,p,nu")?;
    for j in 0..sol.m {
        writeln!(f, "{},{},{}", sol.x[j], sol.p[j], sol.nu[j])?;
    }
    Ok(())
}

/// Seeded Monte Carlo relative L² distance
/// `‖a − b‖ / ‖b‖` over the unit torus.
pub fn relative_l2(
    a: &dyn Fn(&[f64]) -> f64,
    b: &dyn Fn(&[f64]) -> f64,
    d: usize,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for xi in x.iter_mut() {
            *xi = rng.gen::<f64>();
        }
        let va = a(&x);
        let vb = b(&x);
        num += (va - vb) * (va - vb);
        den += vb * vb;
    }
    (num / den).sqrt()
}

/// Relative L² distance between two fields.
pub fn relative_l2_fields(a: &dyn Field, b: &dyn Field, samples: usize, seed: u64) -> f64 {
    relative_l2(&|x| a.value(x), &|x| b.value(x), b.dim(), samples, seed)
}

/// Ergodic cost of the control `α = b0·∇p` under the density `ν`, by
/// tensor-grid quadrature with `n` nodes per axis.
pub fn quadrature_cost(
    spec: &ProblemSpec,
    nu: &dyn Field,
    p: &dyn Field,
    n: usize,
) -> Result<f64, ModelError> {
    let d = spec.d;
    // Pairwise double integral, when present, over the same grid.
    let pair = match &spec.f_tilde2 {
        None => None,
        Some(kernel) => {
            let kernel = kernel.clone();
            Some(move |x: &[f64], nu: &dyn Field| {
                grid_mean(x.len(), n, |xi| kernel(x, xi) * nu.value(xi))
            })
        }
    };
    let mut err = None;
    let cost = grid_mean(d, n, |x| {
        let gp = p.grad(x);
        let alpha_sq: f64 = gp.iter().map(|g| (spec.b0 * g).powi(2)).sum();
        let m = nu.value(x);
        let g = match spec.local_coupling.g(m) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                return 0.0;
            }
        };
        let ph = pair.as_ref().map_or(0.0, |f| f(x, nu));
        (0.5 * alpha_sq + spec.f_tilde0.value(x) + ph + g) * m
    });
    match err {
        Some(e) => Err(e),
        None => Ok(cost),
    }
}
