//! Direct minimization of the ergodic cost over Gibbs-reparametrized
//! neural fields.
//!
//! The stationary density of the controlled diffusion with drift `½∇h` is
//! `e^h/∫e^h`, so the ergodic cost becomes an explicit functional of a
//! single scalar field `h`. A network `h_θ` is trained by stochastic
//! gradient descent on the Monte Carlo estimator of that cost: per
//! iteration a fresh uniform batch estimates the normalizer and the outer
//! integral, the tape differentiates the estimate, and the optimizer
//! updates `θ`.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldJet, FnField};
use crate::model::{grid_mean, Coupling, ModelError, ProblemSpec};
use crate::net::{
    init_params, project_constraints, NetError, NetworkArch, NeuralField, ParamVector,
};
use crate::opt::{LrSchedule, OptMethod, Optimizer};
use crate::tape::Tape;

#[derive(Debug, Error)]
pub enum Algo1Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("cost or gradient became non-finite at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error("history io: {0}")]
    Io(#[from] std::io::Error),
}

/// One fresh uniform batch: `l` outer points, `l` companion points for the
/// pairwise term, `q` normalizer points. Stored flat with stride `d`.
pub struct SampleBatch {
    pub d: usize,
    pub l: usize,
    pub q: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl SampleBatch {
    pub fn new(d: usize, l: usize, q: usize) -> Self {
        SampleBatch {
            d,
            l,
            q,
            x: vec![0.0; l * d],
            y: vec![0.0; l * d],
            z: vec![0.0; q * d],
        }
    }

    /// Refills all three point sets uniformly on the torus.
    pub fn redraw(&mut self, rng: &mut impl Rng) {
        for v in self.x.iter_mut().chain(&mut self.y).chain(&mut self.z) {
            *v = rng.gen::<f64>();
        }
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.d..(i + 1) * self.d]
    }
    pub fn z_at(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Outer batch size L.
    pub batch_inner: usize,
    /// Normalizer batch size Q.
    pub batch_normalizer: usize,
    pub lr: LrSchedule,
    #[serde(default = "OptMethod::adam")]
    pub optimizer: OptMethod,
    pub seed: u64,
    /// Apply the norm-constraint projection every this many iterations
    /// (requires bounds on the architecture).
    #[serde(default)]
    pub project_every: Option<u64>,
    /// Stop early once the batch gradient norm falls below this.
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_clamp")]
    pub clamp_bound: f64,
    /// Polyak-Ruppert averaging: return the parameter average over this
    /// final fraction of iterations instead of the last iterate. Zero
    /// disables averaging.
    #[serde(default)]
    pub average_tail: f64,
}

fn default_log_every() -> u64 {
    100
}
fn default_clamp() -> f64 {
    50.0
}

impl TrainConfig {
    pub fn new(iterations: u64, batch: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            iterations,
            batch_inner: batch,
            batch_normalizer: batch,
            lr: LrSchedule::constant(lr),
            optimizer: OptMethod::adam(),
            seed,
            project_every: None,
            grad_tol: 0.0,
            log_every: default_log_every(),
            clamp_bound: default_clamp(),
            average_tail: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub iteration: u64,
    pub cost: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub clamp_hits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    GradientTolerance,
}

pub struct TrainResult {
    pub params: ParamVector,
    pub history: Vec<HistoryRow>,
    pub iterations_run: u64,
    pub stop: StopReason,
    pub clamp_hits_total: u64,
}

/// The estimator evaluated without a tape, for diagnostics and rate
/// studies: returns the cost estimate and the number of clamped
/// exponentials.
pub fn empirical_cost(
    spec: &ProblemSpec,
    h: &dyn Field,
    batch: &SampleBatch,
    clamp_bound: f64,
) -> Result<(f64, u64), Algo1Error> {
    let mut clamp_hits = 0u64;
    let mut eh = |x: &[f64]| {
        let v = h.value(x);
        let c = v.clamp(-clamp_bound, clamp_bound);
        if c != v {
            clamp_hits += 1;
        }
        c.exp()
    };
    let zhat = (0..batch.q).map(|i| eh(batch.z_at(i))).sum::<f64>() / batch.q as f64;
    let mut acc = 0.0;
    for i in 0..batch.l {
        let x = batch.x_at(i);
        let jet = h.jet(x);
        let rho = eh(x) / zhat;
        let mut phi_sq = 0.0;
        let gb = spec.b_tilde.grad(x);
        for k in 0..spec.d {
            let phi = (0.5 * jet.grad[k] - gb[k]) / spec.b0;
            phi_sq += phi * phi;
        }
        let g = match spec.local_coupling {
            Coupling::None => 0.0,
            Coupling::Quadratic(c) => c * rho * rho,
            Coupling::Log => rho.ln(),
        };
        let mut term = (0.5 * phi_sq + spec.f_tilde0.value(x) + g) * rho;
        if let Some(kernel) = &spec.f_tilde2 {
            let y = batch.y_at(i);
            term += kernel(x, y) * rho * (eh(y) / zhat);
        }
        acc += term;
    }
    Ok((acc / batch.l as f64, clamp_hits))
}

/// Records the estimator on the tape; returns the cost node and the
/// number of clamped exponentials.
fn cost_on_tape(
    spec: &ProblemSpec,
    tape: &mut Tape,
    net: crate::tape::NetId,
    batch: &SampleBatch,
    clamp_bound: f64,
) -> (crate::tape::Var, u64) {
    let mut clamp_hits = 0u64;
    let mut zsum = tape.constant(0.0);
    for i in 0..batch.q {
        let hv = tape.value(net, batch.z_at(i));
        let (e, sat) = tape.exp_clamped(hv, clamp_bound);
        clamp_hits += sat as u64;
        zsum = tape.add(zsum, e);
    }
    let zhat = tape.scale(zsum, 1.0 / batch.q as f64);

    let mut acc = tape.constant(0.0);
    for i in 0..batch.l {
        let x = batch.x_at(i);
        let jet = tape.jet(net, x);
        let (e, sat) = tape.exp_clamped(jet.value(), clamp_bound);
        clamp_hits += sat as u64;
        let rho = tape.div(e, zhat);

        let gb = spec.b_tilde.grad(x);
        let mut phi_sq = tape.constant(0.0);
        for k in 0..spec.d {
            let half_g = tape.scale(jet.grad(k), 0.5 / spec.b0);
            let phi = tape.add_const(half_g, -gb[k] / spec.b0);
            let sq = tape.mul(phi, phi);
            phi_sq = tape.add(phi_sq, sq);
        }
        let mut integrand = tape.scale(phi_sq, 0.5);
        integrand = tape.add_const(integrand, spec.f_tilde0.value(x));
        match spec.local_coupling {
            Coupling::None => {}
            Coupling::Quadratic(c) => {
                let r2 = tape.mul(rho, rho);
                let gr = tape.scale(r2, c);
                integrand = tape.add(integrand, gr);
            }
            Coupling::Log => {
                let lr = tape.ln(rho);
                integrand = tape.add(integrand, lr);
            }
        }
        let mut term = tape.mul(integrand, rho);
        if let Some(kernel) = &spec.f_tilde2 {
            let y = batch.y_at(i);
            let hy = tape.value(net, y);
            let (ey, sat) = tape.exp_clamped(hy, clamp_bound);
            clamp_hits += sat as u64;
            let rho_y = tape.div(ey, zhat);
            let pair = tape.mul(rho, rho_y);
            let pair = tape.scale(pair, kernel(x, y));
            term = tape.add(term, pair);
        }
        acc = tape.add(acc, term);
    }
    (tape.scale(acc, 1.0 / batch.l as f64), clamp_hits)
}

/// Estimator value and parameter gradient at fixed weights, for
/// derivative checks and diagnostics.
pub fn cost_and_grad(
    spec: &ProblemSpec,
    arch: &NetworkArch,
    params: &ParamVector,
    batch: &SampleBatch,
    clamp_bound: f64,
) -> Result<(f64, Vec<f64>), Algo1Error> {
    spec.validate()?;
    arch.validate()?;
    let mut tape = Tape::new();
    tape.set_params(&params.values);
    let net = tape.register_net(arch.clone(), 0);
    let (cost, _) = cost_on_tape(spec, &mut tape, net, batch, clamp_bound);
    let value = tape.value_of(cost);
    let mut grad = vec![0.0; params.len()];
    tape.backward(cost, &mut grad);
    Ok((value, grad))
}

/// Runs the stochastic minimization of the empirical ergodic cost.
pub fn train(
    spec: &ProblemSpec,
    arch: &NetworkArch,
    cfg: &TrainConfig,
) -> Result<TrainResult, Algo1Error> {
    spec.validate()?;
    arch.validate()?;
    let mut params = init_params(arch, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut batch = SampleBatch::new(spec.d, cfg.batch_inner, cfg.batch_normalizer);
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut tape = Tape::new();
    tape.set_params(&params.values);
    let net = tape.register_net(arch.clone(), 0);
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::new();
    let mut clamp_total = 0u64;
    let mut stop = StopReason::MaxIterations;
    let mut iterations_run = 0;
    let tail = cfg.average_tail.clamp(0.0, 1.0);
    let average_from = cfg.iterations - (tail * cfg.iterations as f64) as u64;
    let mut average = vec![0.0f64; params.len()];
    let mut averaged = 0u64;

    for k in 0..cfg.iterations {
        batch.redraw(&mut rng);
        tape.set_params(&params.values);
        let (cost, hits) = cost_on_tape(spec, &mut tape, net, &batch, cfg.clamp_bound);
        clamp_total += hits;
        let cost_val = tape.value_of(cost);
        grad.iter_mut().for_each(|g| *g = 0.0);
        tape.backward(cost, &mut grad);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !cost_val.is_finite() || !grad_norm.is_finite() {
            return Err(Algo1Error::NonFinite { iteration: k });
        }
        let lr = cfg.lr.at(k);
        if k % cfg.log_every == 0 {
            history.push(HistoryRow {
                iteration: k,
                cost: cost_val,
                grad_norm,
                lr,
                clamp_hits: hits,
            });
        }
        iterations_run = k + 1;
        if cfg.grad_tol > 0.0 && grad_norm < cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        opt.step(lr, &mut params.values, &grad);
        if let Some(every) = cfg.project_every {
            if every > 0 && (k + 1) % every == 0 {
                project_constraints(arch, &mut params);
            }
        }
        if tail > 0.0 && k >= average_from {
            for (a, p) in average.iter_mut().zip(&params.values) {
                *a += p;
            }
            averaged += 1;
        }
    }

    if averaged > 0 {
        for (p, a) in params.values.iter_mut().zip(&average) {
            *p = a / averaged as f64;
        }
    }

    Ok(TrainResult {
        params,
        history,
        iterations_run,
        stop,
        clamp_hits_total: clamp_total,
    })
}

pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<(), Algo1Error> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iteration,cost,grad_norm,lr,clamp_hits")?;
    for r in history {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.iteration, r.cost, r.grad_norm, r.lr, r.clamp_hits
        )?;
    }
    Ok(())
}

/// Recovered stationary solution `(λ, p, ν)` of the optimality system.
pub struct SolutionReport {
    pub lambda: f64,
    pub p: Arc<dyn Field>,
    pub nu: Arc<dyn Field>,
    pub b0: f64,
}

impl SolutionReport {
    /// The recovered feedback control `α(x) = b0·∇p(x)`.
    pub fn control_at(&self, x: &[f64]) -> Vec<f64> {
        self.p.grad(x).iter().map(|g| self.b0 * g).collect()
    }
}

fn torus_mean(d: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    if d <= 3 {
        let n = match d {
            1 => 4096,
            2 => 128,
            _ => 48,
        };
        grid_mean(d, n, f)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = 200_000;
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..samples {
            for xi in x.iter_mut() {
                *xi = rng.gen::<f64>();
            }
            acc += f(&x);
        }
        acc / samples as f64
    }
}

/// Turns a trained field `h` back into the solution triple: the density
/// `ν = e^h/∫e^h`, the mean-zero adjoint `p = (h/2 − b̃)/b0²`, and the
/// ergodic constant `λ` read off the adjoint equation on a quadrature set.
pub fn recover_solution(
    spec: &ProblemSpec,
    h: Arc<dyn Field>,
) -> Result<SolutionReport, Algo1Error> {
    let d = spec.d;
    let zh = torus_mean(d, |x| h.value(x).exp());
    let nu: Arc<dyn Field> = {
        let h = Arc::clone(&h);
        let hv = Arc::clone(&h);
        Arc::new(FnField::new(
            d,
            move |x: &[f64]| hv.value(x).exp() / zh,
            move |x: &[f64]| {
                let j = h.jet(x);
                let nu = j.value.exp() / zh;
                let gsq: f64 = j.grad.iter().map(|g| g * g).sum();
                FieldJet {
                    value: nu,
                    grad: j.grad.iter().map(|g| nu * g).collect(),
                    laplacian: nu * (j.laplacian + gsq),
                }
            },
        ))
    };

    let b0sq = spec.b0 * spec.b0;
    let p_raw = {
        let h = Arc::clone(&h);
        let b_tilde = Arc::clone(&spec.b_tilde);
        move |x: &[f64]| (0.5 * h.value(x) - b_tilde.value(x)) / b0sq
    };
    let p_mean = torus_mean(d, &p_raw);
    let p: Arc<dyn Field> = {
        let h = Arc::clone(&h);
        let b_tilde = Arc::clone(&spec.b_tilde);
        let pv = p_raw.clone();
        Arc::new(FnField::new(
            d,
            move |x: &[f64]| pv(x) - p_mean,
            move |x: &[f64]| {
                let jh = h.jet(x);
                let jb = b_tilde.jet(x);
                FieldJet {
                    value: (0.5 * jh.value - jb.value) / b0sq - p_mean,
                    grad: jh
                        .grad
                        .iter()
                        .zip(&jb.grad)
                        .map(|(gh, gb)| (0.5 * gh - gb) / b0sq)
                        .collect(),
                    laplacian: (0.5 * jh.laplacian - jb.laplacian) / b0sq,
                }
            },
        ))
    };

    // Pairwise slots of the adjoint equation, estimated on a fixed
    // uniform sample set when a kernel is present.
    let pair_points: Vec<Vec<f64>> = if spec.f_tilde2.is_some() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        (0..512)
            .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
            .collect()
    } else {
        Vec::new()
    };

    let lambda = {
        let spec = spec.clone();
        let p = Arc::clone(&p);
        let nu = Arc::clone(&nu);
        torus_mean(d, move |x| {
            let jp = p.jet(x);
            let m = nu.value(x);
            let (pair_h, pair_dmu) = match &spec.f_tilde2 {
                None => (0.0, 0.0),
                Some(kernel) => {
                    let mut ph = 0.0;
                    let mut pd = 0.0;
                    for xi in &pair_points {
                        let w = nu.value(xi);
                        ph += kernel(x, xi) * w;
                        pd += kernel(xi, x) * w;
                    }
                    let n = pair_points.len() as f64;
                    (ph / n, pd / n)
                }
            };
            let (hstar, _) = spec
                .hamiltonian_min(x, &jp.grad, m, pair_h)
                .unwrap_or((f64::NAN, Vec::new()));
            let dmu = spec.local_dmu_term(m).unwrap_or(f64::NAN) + pair_dmu;
            hstar + dmu - 0.5 * jp.laplacian
        })
    };

    Ok(SolutionReport {
        lambda,
        p,
        nu,
        b0: spec.b0,
    })
}

/// The exactly optimal reparametrized field `h⋆ = 2(b0²·p + b̃)` attached
/// to a known adjoint state.
pub fn h_from_p(spec: &ProblemSpec, p: Arc<dyn Field>) -> Arc<dyn Field> {
    let b0sq = spec.b0 * spec.b0;
    let b_tilde = Arc::clone(&spec.b_tilde);
    let p2 = Arc::clone(&p);
    let bt2 = Arc::clone(&b_tilde);
    Arc::new(FnField::new(
        spec.d,
        move |x: &[f64]| 2.0 * (b0sq * p.value(x) + b_tilde.value(x)),
        move |x: &[f64]| {
            let jp = p2.jet(x);
            let jb = bt2.jet(x);
            FieldJet {
                value: 2.0 * (b0sq * jp.value + jb.value),
                grad: jp
                    .grad
                    .iter()
                    .zip(&jb.grad)
                    .map(|(gp, gb)| 2.0 * (b0sq * gp + gb))
                    .collect(),
                laplacian: 2.0 * (b0sq * jp.laplacian + jb.laplacian),
            }
        },
    ))
}

/// A neural `h` bound to trained parameters, as a plain field.
pub fn trained_field(arch: &NetworkArch, params: &ParamVector) -> Arc<dyn Field> {
    Arc::new(NeuralField {
        arch: arch.clone(),
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testcase;
    use crate::net::init_params;

    fn noisy_net(arch: &NetworkArch, seed: u64) -> ParamVector {
        let mut p = init_params(arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for v in &mut p.values {
            *v += rng.gen_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn tape_cost_matches_plain_cost() {
        for id in [1u32, 2] {
            let tc = testcase(id, 1).unwrap();
            let arch = NetworkArch::tanh_embedded(1, &[8]);
            let params = noisy_net(&arch, 3);
            let field = NeuralField {
                arch: arch.clone(),
                params: params.clone(),
            };
            let mut batch = SampleBatch::new(1, 64, 64);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            batch.redraw(&mut rng);
            let (plain, hits_plain) = empirical_cost(&tc.spec, &field, &batch, 50.0).unwrap();
            let mut tape = Tape::new();
            tape.set_params(&params.values);
            let net = tape.register_net(arch.clone(), 0);
            let (cost, hits_tape) = cost_on_tape(&tc.spec, &mut tape, net, &batch, 50.0);
            assert!((tape.value_of(cost) - plain).abs() < 1e-12 * (1.0 + plain.abs()));
            assert_eq!(hits_plain, hits_tape);
        }
    }

    #[test]
    fn cost_is_shift_invariant() {
        // The estimator only sees e^h/Ẑ, so h ↦ h + c leaves it unchanged.
        let tc = testcase(2, 1).unwrap();
        let arch = NetworkArch::tanh_embedded(1, &[6]);
        let params = noisy_net(&arch, 4);
        let mut shifted = params.clone();
        // The final bias shifts h by a constant.
        let last = shifted.values.len() - 1;
        shifted.values[last] += 0.8;
        let f1 = NeuralField {
            arch: arch.clone(),
            params,
        };
        let f2 = NeuralField {
            arch,
            params: shifted,
        };
        let mut batch = SampleBatch::new(1, 128, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        batch.redraw(&mut rng);
        let (c1, _) = empirical_cost(&tc.spec, &f1, &batch, 50.0).unwrap();
        let (c2, _) = empirical_cost(&tc.spec, &f2, &batch, 50.0).unwrap();
        assert!((c1 - c2).abs() < 1e-10 * (1.0 + c1.abs()), "{c1} vs {c2}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let tc = testcase(2, 1).unwrap();
        let arch = NetworkArch::tanh_embedded(1, &[4]);
        let params = noisy_net(&arch, 8);
        let mut batch = SampleBatch::new(1, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        batch.redraw(&mut rng);
        let mut tape = Tape::new();
        tape.set_params(&params.values);
        let net = tape.register_net(arch.clone(), 0);
        let (cost, _) = cost_on_tape(&tc.spec, &mut tape, net, &batch, 50.0);
        let mut grad = vec![0.0; params.len()];
        tape.backward(cost, &mut grad);

        let eval = |theta: &Vec<f64>| {
            let field = NeuralField {
                arch: arch.clone(),
                params: ParamVector {
                    values: theta.clone(),
                },
            };
            empirical_cost(&tc.spec, &field, &batch, 50.0).unwrap().0
        };
        let h = 1e-6;
        for i in 0..params.len() {
            let mut t = params.values.clone();
            t[i] += h;
            let fp = eval(&t);
            t[i] -= 2.0 * h;
            let fm = eval(&t);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() / (1.0 + fd.abs()) < 1e-5,
                "param {i}: {} vs {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn exact_h_minimizes_lambda_readout() {
        // Feeding the exact reparametrized field through the recovery
        // reproduces the known ergodic constant of the log-coupling case.
        let tc = testcase(4, 1).unwrap();
        let exact = tc.exact.as_ref().unwrap();
        let h = h_from_p(&tc.spec, Arc::clone(&exact.p));
        let report = recover_solution(&tc.spec, h).unwrap();
        assert!(
            (report.lambda - exact.lambda()).abs() < 1e-4,
            "{} vs {}",
            report.lambda,
            exact.lambda()
        );
        // p is recovered up to its mean; the exact p here is already
        // mean-corrected only through e^{2p}, so compare shapes.
        let x = [0.3];
        let p_exact_mean = grid_mean(1, 2048, |x| exact.p.value(x));
        assert!(
            (report.p.value(&x) - (exact.p.value(&x) - p_exact_mean)).abs() < 1e-6
        );
        assert!((report.nu.value(&x) - exact.nu_at(&x)).abs() < 1e-8);
    }

    #[test]
    fn train_short_run_reduces_cost() {
        let tc = testcase(1, 1).unwrap();
        let arch = NetworkArch::tanh_embedded(1, &[16]);
        let cfg = TrainConfig::new(300, 128, 0.02, 7);
        let result = train(&tc.spec, &arch, &cfg).unwrap();
        assert_eq!(result.stop, StopReason::MaxIterations);
        let first = result.history.first().unwrap().cost;
        let last = result.history.last().unwrap().cost;
        assert!(
            last < first,
            "cost did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn train_is_deterministic() {
        let tc = testcase(1, 1).unwrap();
        let arch = NetworkArch::tanh_embedded(1, &[6]);
        let cfg = TrainConfig::new(50, 32, 0.02, 11);
        let a = train(&tc.spec, &arch, &cfg).unwrap();
        let b = train(&tc.spec, &arch, &cfg).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(
            a.history.last().unwrap().cost.to_bits(),
            b.history.last().unwrap().cost.to_bits()
        );
    }

    #[test]
    fn tail_averaging_smooths_the_last_iterates() {
        let tc = testcase(1, 1).unwrap();
        let arch = NetworkArch::tanh_embedded(1, &[6]);
        let mut cfg = TrainConfig::new(60, 32, 0.02, 11);
        let last = train(&tc.spec, &arch, &cfg).unwrap();
        cfg.average_tail = 0.5;
        let avg = train(&tc.spec, &arch, &cfg).unwrap();
        // Same trajectory, different reported parameters.
        assert_ne!(last.params.values, avg.params.values);
        assert!(avg.params.values.iter().all(|v| v.is_finite()));
        // Averaging is deterministic too.
        let again = train(&tc.spec, &arch, &cfg).unwrap();
        assert_eq!(avg.params.values, again.params.values);
    }

    #[test]
    fn history_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let rows = vec![HistoryRow {
            iteration: 0,
            cost: 1.5,
            grad_norm: 0.3,
            lr: 0.01,
            clamp_hits: 0,
        }];
        write_history_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,cost,grad_norm,lr,clamp_hits\n"));
        assert!(text.contains("0,1.5,0.3,0.01,0"));
    }
}
