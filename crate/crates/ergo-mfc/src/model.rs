//! Problem data: drift, running cost, couplings, minimized Hamiltonian,
//! and the catalog of test cases with manufactured exact solutions.
//!
//! The model class is fixed: state on the unit torus `[0,1)^d`, drift
//! `b(x,α) = b0·α + ∇b̃(x)`, running cost
//! `f(x,μ,α) = ½|α|² + f̃₀(x) + ∫ f̃₂(x,ξ)μ(dξ) + g(μ(x))`, unit noise.
//! All trigonometric data is scaled by 2π so the period is 1.

use std::f64::consts::{PI, TAU};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::field::{finite_difference_jet, Field, FieldJet, FnField, ProdSinSq, SumSin, ZeroField};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("density must be positive under the logarithmic coupling (got {0})")]
    NonPositiveDensity(f64),
    #[error("no test case with id {id} in dimension {d}")]
    InvalidTestCase { id: u32, d: usize },
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
}

/// Local density cost `g(m)` added to the running cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coupling {
    None,
    /// `g(m) = c·m²`
    Quadratic(f64),
    /// `g(m) = ln m`
    Log,
}

impl Coupling {
    pub fn g(&self, m: f64) -> Result<f64, ModelError> {
        match *self {
            Coupling::None => Ok(0.0),
            Coupling::Quadratic(c) => Ok(c * m * m),
            Coupling::Log => {
                if m <= 0.0 {
                    Err(ModelError::NonPositiveDensity(m))
                } else {
                    Ok(m.ln())
                }
            }
        }
    }

    pub fn g_prime(&self, m: f64) -> Result<f64, ModelError> {
        match *self {
            Coupling::None => Ok(0.0),
            Coupling::Quadratic(c) => Ok(2.0 * c * m),
            Coupling::Log => {
                if m <= 0.0 {
                    Err(ModelError::NonPositiveDensity(m))
                } else {
                    Ok(1.0 / m)
                }
            }
        }
    }

    /// The measure-derivative contribution `m·g'(m)` entering the adjoint
    /// equation of the control problem. Identically 1 for the log coupling.
    pub fn dmu_contribution(&self, m: f64) -> Result<f64, ModelError> {
        match *self {
            Coupling::None => Ok(0.0),
            Coupling::Quadratic(c) => Ok(2.0 * c * m * m),
            Coupling::Log => {
                if m <= 0.0 {
                    Err(ModelError::NonPositiveDensity(m))
                } else {
                    Ok(1.0)
                }
            }
        }
    }
}

/// Which optimality system the measure-derivative terms follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Mean field control: the adjoint equation carries the extra
    /// `∫ D_μ H⋆ dν` term.
    Mfc,
    /// Mean field game: that term is absent.
    Mfg,
}

/// Symmetric-in-construction pairwise interaction kernel `f̃₂(x, ξ)`.
pub type PairKernel = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Data of one ergodic control problem in the tractable model class.
#[derive(Clone)]
pub struct ProblemSpec {
    pub d: usize,
    pub b0: f64,
    pub b_tilde: Arc<dyn Field>,
    pub f_tilde0: Arc<dyn Field>,
    pub f_tilde2: Option<PairKernel>,
    pub local_coupling: Coupling,
    pub kind: ProblemKind,
}

impl ProblemSpec {
    /// Problem with zero drift potential and zero state cost.
    pub fn trivial(d: usize, b0: f64) -> Self {
        ProblemSpec {
            d,
            b0,
            b_tilde: Arc::new(ZeroField(d)),
            f_tilde0: Arc::new(ZeroField(d)),
            f_tilde2: None,
            local_coupling: Coupling::None,
            kind: ProblemKind::Mfc,
        }
    }

    /// Structural checks plus a finite-difference audit of the drift
    /// potential's analytic gradient on random points.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 {
            return Err(ModelError::InvalidSpec("dimension must be >= 1".into()));
        }
        if self.b0 == 0.0 {
            return Err(ModelError::InvalidSpec("b0 must be nonzero".into()));
        }
        if self.b_tilde.dim() != self.d || self.f_tilde0.dim() != self.d {
            return Err(ModelError::InvalidSpec(
                "field handles must match the problem dimension".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x: Vec<f64> = (0..self.d).map(|_| rng.gen::<f64>()).collect();
            let analytic = self.b_tilde.jet(&x);
            let fd = finite_difference_jet(self.b_tilde.as_ref(), &x, 1e-5);
            for i in 0..self.d {
                let err = (analytic.grad[i] - fd.grad[i]).abs();
                if err > 1e-6 * (1.0 + analytic.grad[i].abs()) {
                    return Err(ModelError::InvalidSpec(format!(
                        "analytic gradient of b_tilde disagrees with finite differences \
                         at {:?} (component {i}, error {err:.3e})",
                        x
                    )));
                }
            }
        }
        Ok(())
    }

    /// Running cost `f(x, μ, α)` with the measure slots supplied by the
    /// caller: the density of μ at x and an estimate of `∫ f̃₂(x,ξ)μ(dξ)`.
    pub fn running_cost(
        &self,
        x: &[f64],
        mu_density_at_x: f64,
        pairwise_avg: f64,
        alpha: &[f64],
    ) -> Result<f64, ModelError> {
        let sq: f64 = alpha.iter().map(|a| a * a).sum();
        Ok(0.5 * sq
            + self.f_tilde0.value(x)
            + pairwise_avg
            + self.local_coupling.g(mu_density_at_x)?)
    }

    /// Minimized Hamiltonian `H⋆(x, μ, y)` and its minimizer.
    ///
    /// For the drift `b0·α + ∇b̃` and quadratic control cost the infimum is
    /// attained at `α⋆ = b0·y`.
    pub fn hamiltonian_min(
        &self,
        x: &[f64],
        y: &[f64],
        mu_density_at_x: f64,
        pairwise_avg: f64,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let ysq: f64 = y.iter().map(|v| v * v).sum();
        let grad_b = self.b_tilde.grad(x);
        let y_dot_gb: f64 = y.iter().zip(&grad_b).map(|(a, b)| a * b).sum();
        let value = -0.5 * self.b0 * self.b0 * ysq - y_dot_gb
            + self.f_tilde0.value(x)
            + pairwise_avg
            + self.local_coupling.g(mu_density_at_x)?;
        let alpha = y.iter().map(|v| self.b0 * v).collect();
        Ok((value, alpha))
    }

    /// `∫ D_μ H⋆(ξ, ν, ∇p(ξ))(x) ν(dξ)` restricted to the local coupling.
    /// Zero in the game setting; `ν(x)·g'(ν(x))` in the control setting.
    /// Pairwise kernels contribute separately through `∫ f̃₂(ξ, x) ν(dξ)`.
    pub fn local_dmu_term(&self, density_at_x: f64) -> Result<f64, ModelError> {
        match self.kind {
            ProblemKind::Mfg => Ok(0.0),
            ProblemKind::Mfc => self.local_coupling.dmu_contribution(density_at_x),
        }
    }
}

/// `f̃(x) = ½(Δp(x) + |∇p(x)|²) − 2p(x)`: the state cost for which a given
/// `p` solves the simplified optimality system of the explicit examples
/// (unit `b0`, no drift potential, logarithmic coupling).
pub fn manufactured_ftilde(p_exact: Arc<dyn Field>) -> Arc<dyn Field> {
    let d = p_exact.dim();
    let p2 = Arc::clone(&p_exact);
    Arc::new(FnField::new(
        d,
        move |x: &[f64]| {
            let j = p_exact.jet(x);
            let gsq: f64 = j.grad.iter().map(|g| g * g).sum();
            0.5 * (j.laplacian + gsq) - 2.0 * j.value
        },
        move |x: &[f64]| {
            // Jets of the manufactured cost are obtained by finite
            // differences of the analytic expression; only the value is
            // needed by the solvers.
            let step = 1e-5;
            let value = {
                let j = p2.jet(x);
                let gsq: f64 = j.grad.iter().map(|g| g * g).sum();
                0.5 * (j.laplacian + gsq) - 2.0 * j.value
            };
            let mut grad = vec![0.0; d];
            let mut lap = 0.0;
            let mut xp = x.to_vec();
            let eval = |x: &[f64]| {
                let j = p2.jet(x);
                let gsq: f64 = j.grad.iter().map(|g| g * g).sum();
                0.5 * (j.laplacian + gsq) - 2.0 * j.value
            };
            for i in 0..d {
                xp[i] = x[i] + step;
                let fp = eval(&xp);
                xp[i] = x[i] - step;
                let fm = eval(&xp);
                xp[i] = x[i];
                grad[i] = (fp - fm) / (2.0 * step);
                lap += (fp - 2.0 * value + fm) / (step * step);
            }
            FieldJet {
                value,
                grad,
                laplacian: lap,
            }
        },
    ))
}

/// Exact `(p, ν, λ)` attached to the explicit test cases.
///
/// `ν = e^{2p}/∫e^{2p}` and `λ = 1 − ln ∫e^{2p}`; the normalizer is
/// computed on first use.
pub struct ExactSolution {
    pub p: Arc<dyn Field>,
    normalizer: OnceLock<f64>,
    normalizer_hint: Option<f64>,
}

impl ExactSolution {
    pub fn new(p: Arc<dyn Field>) -> Self {
        ExactSolution {
            p,
            normalizer: OnceLock::new(),
            normalizer_hint: None,
        }
    }

    fn with_normalizer(p: Arc<dyn Field>, z: f64) -> Self {
        ExactSolution {
            p,
            normalizer: OnceLock::new(),
            normalizer_hint: Some(z),
        }
    }

    /// `∫ e^{2p(x)} dx` over the unit torus.
    pub fn normalizer(&self) -> f64 {
        *self.normalizer.get_or_init(|| {
            if let Some(z) = self.normalizer_hint {
                return z;
            }
            let d = self.p.dim();
            if d <= 3 {
                let n = match d {
                    1 => 4096,
                    2 => 256,
                    _ => 64,
                };
                grid_mean(d, n, |x| (2.0 * self.p.value(x)).exp())
            } else {
                // Seeded Monte Carlo for dimensions beyond tensor grids.
                let mut rng = ChaCha8Rng::seed_from_u64(42);
                let samples = 2_000_000;
                let mut acc = 0.0;
                let mut x = vec![0.0; d];
                for _ in 0..samples {
                    for xi in x.iter_mut() {
                        *xi = rng.gen::<f64>();
                    }
                    acc += (2.0 * self.p.value(&x)).exp();
                }
                acc / samples as f64
            }
        })
    }

    pub fn lambda(&self) -> f64 {
        1.0 - self.normalizer().ln()
    }

    pub fn nu_at(&self, x: &[f64]) -> f64 {
        (2.0 * self.p.value(x)).exp() / self.normalizer()
    }

    /// The exact density as a field with analytic jets.
    pub fn nu_field(&self) -> Arc<dyn Field> {
        let p = Arc::clone(&self.p);
        let z = self.normalizer();
        let p2 = Arc::clone(&p);
        let z2 = z;
        Arc::new(FnField::new(
            p.dim(),
            move |x: &[f64]| (2.0 * p.value(x)).exp() / z,
            move |x: &[f64]| {
                let j = p2.jet(x);
                let nu = (2.0 * j.value).exp() / z2;
                let grad: Vec<f64> = j.grad.iter().map(|g| 2.0 * nu * g).collect();
                let gsq: f64 = j.grad.iter().map(|g| g * g).sum();
                FieldJet {
                    value: nu,
                    grad,
                    laplacian: nu * (2.0 * j.laplacian + 4.0 * gsq),
                }
            },
        ))
    }
}

/// Mean of a function over the uniform tensor grid with `n` nodes per axis.
/// On the torus this is the trapezoidal rule.
pub(crate) fn grid_mean(d: usize, n: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let total = n.pow(d as u32);
    let mut acc = 0.0;
    for _ in 0..total {
        for (k, &i) in idx.iter().enumerate() {
            x[k] = i as f64 / n as f64;
        }
        acc += f(&x);
        for k in 0..d {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
    acc / total as f64
}

/// A test-case configuration, with the exact solution when one is known.
pub struct TestCase {
    pub id: u32,
    pub spec: ProblemSpec,
    pub exact: Option<ExactSolution>,
}

/// The oscillatory state cost shared by test cases 1-3.
fn oscillatory_ftilde() -> Arc<dyn Field> {
    Arc::new(FnField::new(
        1,
        |x: &[f64]| {
            50.0 * (0.1 * (TAU * x[0]).cos()
                + (2.0 * TAU * x[0]).cos()
                + 0.1 * (TAU * (x[0] - PI / 8.0)).sin())
        },
        |x: &[f64]| {
            let t = TAU * x[0];
            let u = TAU * (x[0] - PI / 8.0);
            let value = 50.0 * (0.1 * t.cos() + (2.0 * t).cos() + 0.1 * u.sin());
            let grad =
                50.0 * TAU * (-0.1 * t.sin() - 2.0 * (2.0 * t).sin() + 0.1 * u.cos());
            let lap =
                50.0 * TAU * TAU * (-0.1 * t.cos() - 4.0 * (2.0 * t).cos() - 0.1 * u.sin());
            FieldJet {
                value,
                grad: vec![grad],
                laplacian: lap,
            }
        },
    ))
}

/// The five built-in benchmark problems. Ids 1-3 are univariate; 4 and 5
/// carry closed-form solutions in any dimension.
pub fn testcase(id: u32, d: usize) -> Result<TestCase, ModelError> {
    match (id, d) {
        (1, 1) => Ok(TestCase {
            id,
            spec: ProblemSpec {
                f_tilde0: oscillatory_ftilde(),
                ..ProblemSpec::trivial(1, 1.0)
            },
            exact: None,
        }),
        (2, 1) | (3, 1) => Ok(TestCase {
            id,
            spec: ProblemSpec {
                f_tilde0: oscillatory_ftilde(),
                local_coupling: Coupling::Quadratic(1.0),
                kind: if id == 2 {
                    ProblemKind::Mfc
                } else {
                    ProblemKind::Mfg
                },
                ..ProblemSpec::trivial(1, 1.0)
            },
            exact: None,
        }),
        (4, d) if d >= 1 => {
            let p: Arc<dyn Field> = Arc::new(SumSin(d));
            // ∫ e^{2 Σ sin} factorizes; one high-resolution 1D quadrature.
            let z1 = grid_mean(1, 1 << 14, |x| (2.0 * (TAU * x[0]).sin()).exp());
            let exact = ExactSolution::with_normalizer(Arc::clone(&p), z1.powi(d as i32));
            Ok(TestCase {
                id,
                spec: ProblemSpec {
                    f_tilde0: manufactured_ftilde(p),
                    local_coupling: Coupling::Log,
                    ..ProblemSpec::trivial(d, 1.0)
                },
                exact: Some(exact),
            })
        }
        (5, d) if d >= 1 => {
            let p: Arc<dyn Field> = Arc::new(ProdSinSq(d));
            let exact = ExactSolution::new(Arc::clone(&p));
            Ok(TestCase {
                id,
                spec: ProblemSpec {
                    f_tilde0: manufactured_ftilde(p),
                    local_coupling: Coupling::Log,
                    ..ProblemSpec::trivial(d, 1.0)
                },
                exact: Some(exact),
            })
        }
        _ => Err(ModelError::InvalidTestCase { id, d }),
    }
}
