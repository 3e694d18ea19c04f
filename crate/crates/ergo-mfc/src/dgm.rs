//! Deep Galerkin solver for the coupled stationary optimality system.
//!
//! Two networks represent the unknowns: the density as `ν = e^u` for
//! positivity and the adjoint state `p` directly, with one extra scalar
//! parameter for the ergodic constant. The loss is a weighted sum of the
//! root-mean-square Fokker-Planck and adjoint-equation residuals on a
//! fresh uniform batch, plus penalties pinning the density mass to one
//! and the mean of `p` to zero. Periodicity penalties are available for
//! architectures that are not periodic by construction.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldJet, FnField};
use crate::model::{Coupling, ModelError, ProblemKind, ProblemSpec};
use crate::net::{init_params, NetError, NetworkArch, NeuralField, ParamVector};
use crate::opt::{LrSchedule, OptMethod, Optimizer};
use crate::tape::{NetId, Tape, Var};

#[derive(Debug, Error)]
pub enum DgmError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("loss or gradient became non-finite at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error("history io: {0}")]
    Io(#[from] std::io::Error),
}

/// Relative weights of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub fp: f64,
    pub hjb: f64,
    pub periodic: f64,
    pub norm: f64,
    pub mean: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            fp: 1.0,
            hjb: 1.0,
            periodic: 1.0,
            norm: 1.0,
            mean: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgmConfig {
    pub iterations: u64,
    pub batch: usize,
    pub lr: LrSchedule,
    #[serde(default = "OptMethod::adam")]
    pub optimizer: OptMethod,
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    /// Skip the periodicity penalty; valid when both networks are
    /// periodic by construction.
    #[serde(default = "default_true")]
    pub exact_periodic: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_clamp")]
    pub clamp_bound: f64,
}

fn default_true() -> bool {
    true
}
fn default_log_every() -> u64 {
    100
}
fn default_clamp() -> f64 {
    50.0
}

impl DgmConfig {
    pub fn new(iterations: u64, batch: usize, lr: f64, seed: u64) -> Self {
        DgmConfig {
            iterations,
            batch,
            lr: LrSchedule::constant(lr),
            optimizer: OptMethod::adam(),
            seed,
            weights: LossWeights::default(),
            exact_periodic: true,
            log_every: default_log_every(),
            clamp_bound: default_clamp(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgmHistoryRow {
    pub iteration: u64,
    pub loss: f64,
    pub fp_rms: f64,
    pub hjb_rms: f64,
    pub periodic: f64,
    pub norm_gap: f64,
    pub mean_gap: f64,
    pub lambda: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

pub struct DgmResult {
    /// Concatenated `[θ_ν | θ_p | λ]`.
    pub params: Vec<f64>,
    pub lambda: f64,
    pub history: Vec<DgmHistoryRow>,
    pub iterations_run: u64,
}

/// Pointwise Fokker-Planck residual of the stationary system:
/// `½Δν − div(ν·(b0²∇p + ∇b̃))`.
pub fn residual_fp(spec: &ProblemSpec, nu: &dyn Field, p: &dyn Field, x: &[f64]) -> f64 {
    let jn = nu.jet(x);
    let jp = p.jet(x);
    let jb = spec.b_tilde.jet(x);
    let b0sq = spec.b0 * spec.b0;
    let mut adv = 0.0;
    for k in 0..spec.d {
        adv += (b0sq * jp.grad[k] + jb.grad[k]) * jn.grad[k];
    }
    0.5 * jn.laplacian - (b0sq * jp.laplacian + jb.laplacian) * jn.value - adv
}

/// Pointwise adjoint-equation residual
/// `λ + ½Δp − H⋆(x,ν,∇p) − D_μ-terms`, with the pairwise slots supplied
/// by the caller.
pub fn residual_hjb(
    spec: &ProblemSpec,
    nu: &dyn Field,
    p: &dyn Field,
    lambda: f64,
    x: &[f64],
    pair_h: f64,
    pair_dmu: f64,
) -> Result<f64, ModelError> {
    let jp = p.jet(x);
    let m = nu.value(x);
    let (hstar, _) = spec.hamiltonian_min(x, &jp.grad, m, pair_h)?;
    let pair_dmu = match spec.kind {
        ProblemKind::Mfc => pair_dmu,
        ProblemKind::Mfg => 0.0,
    };
    let dmu = spec.local_dmu_term(m)? + pair_dmu;
    Ok(lambda + 0.5 * jp.laplacian - hstar - dmu)
}

struct BatchLoss {
    loss: Var,
    fp_rms: f64,
    hjb_rms: f64,
    periodic: f64,
    norm_gap: f64,
    mean_gap: f64,
}

/// Records the weighted residual loss for one batch.
#[allow(clippy::too_many_arguments)]
fn loss_on_tape(
    spec: &ProblemSpec,
    tape: &mut Tape,
    net_nu: NetId,
    net_p: NetId,
    lambda_idx: usize,
    cfg: &DgmConfig,
    points: &[f64],
    companions: &[f64],
) -> BatchLoss {
    let d = spec.d;
    let n = points.len() / d;
    let b0sq = spec.b0 * spec.b0;
    let lambda = tape.param(lambda_idx);

    let mut fp_sq = tape.constant(0.0);
    let mut hjb_sq = tape.constant(0.0);
    let mut nu_sum = tape.constant(0.0);
    let mut p_sum = tape.constant(0.0);

    for i in 0..n {
        let x = &points[i * d..(i + 1) * d];
        let ju = tape.jet(net_nu, x);
        let jp = tape.jet(net_p, x);
        let jb = spec.b_tilde.jet(x);
        let (nu, _) = {
            let u = ju.value();
            tape.exp_clamped(u, cfg.clamp_bound)
        };
        nu_sum = tape.add(nu_sum, nu);
        p_sum = tape.add(p_sum, jp.value());

        // ∇ν = ν∇u, Δν = ν(Δu + |∇u|²).
        let mut gu_sq = tape.constant(0.0);
        for k in 0..d {
            let g = ju.grad(k);
            let g2 = tape.mul(g, g);
            gu_sq = tape.add(gu_sq, g2);
        }
        let lap_u_term = tape.add(ju.laplacian(), gu_sq);
        let lap_nu = tape.mul(nu, lap_u_term);

        // Fokker-Planck residual.
        let mut fp = tape.scale(lap_nu, 0.5);
        let drift_div = tape.scale(jp.laplacian(), b0sq);
        let drift_div = tape.add_const(drift_div, jb.laplacian);
        let dd_nu = tape.mul(drift_div, nu);
        fp = tape.sub(fp, dd_nu);
        for k in 0..d {
            let drift_k = tape.scale(jp.grad(k), b0sq);
            let drift_k = tape.add_const(drift_k, jb.grad[k]);
            let gnu_k = tape.mul(nu, ju.grad(k));
            let adv = tape.mul(drift_k, gnu_k);
            fp = tape.sub(fp, adv);
        }
        let fp2 = tape.mul(fp, fp);
        fp_sq = tape.add(fp_sq, fp2);

        // Adjoint-equation residual.
        let mut gp_sq = tape.constant(0.0);
        let mut gp_dot_gb = tape.constant(0.0);
        for k in 0..d {
            let g = jp.grad(k);
            let g2 = tape.mul(g, g);
            gp_sq = tape.add(gp_sq, g2);
            let gb = tape.scale(g, jb.grad[k]);
            gp_dot_gb = tape.add(gp_dot_gb, gb);
        }
        let mut hstar = tape.scale(gp_sq, -0.5 * b0sq);
        hstar = tape.sub(hstar, gp_dot_gb);
        hstar = tape.add_const(hstar, spec.f_tilde0.value(x));
        match spec.local_coupling {
            Coupling::None => {}
            Coupling::Quadratic(c) => {
                let n2 = tape.mul(nu, nu);
                let g = tape.scale(n2, c);
                hstar = tape.add(hstar, g);
            }
            Coupling::Log => {
                let g = tape.ln(nu);
                hstar = tape.add(hstar, g);
            }
        }
        let mut pair_dmu = tape.constant(0.0);
        if let Some(kernel) = &spec.f_tilde2 {
            let y = &companions[i * d..(i + 1) * d];
            let uy = tape.value(net_nu, y);
            let (nu_y, _) = tape.exp_clamped(uy, cfg.clamp_bound);
            let ph = tape.scale(nu_y, kernel(x, y));
            hstar = tape.add(hstar, ph);
            pair_dmu = tape.scale(nu_y, kernel(y, x));
        }
        let mut dmu = match (spec.kind, spec.local_coupling) {
            (ProblemKind::Mfg, _) | (ProblemKind::Mfc, Coupling::None) => tape.constant(0.0),
            (ProblemKind::Mfc, Coupling::Quadratic(c)) => {
                let n2 = tape.mul(nu, nu);
                tape.scale(n2, 2.0 * c)
            }
            (ProblemKind::Mfc, Coupling::Log) => tape.constant(1.0),
        };
        if spec.kind == ProblemKind::Mfc {
            dmu = tape.add(dmu, pair_dmu);
        }
        let half_lap_p = tape.scale(jp.laplacian(), 0.5);
        let mut hjb = tape.add(lambda, half_lap_p);
        hjb = tape.sub(hjb, hstar);
        hjb = tape.sub(hjb, dmu);
        let hjb2 = tape.mul(hjb, hjb);
        hjb_sq = tape.add(hjb_sq, hjb2);
    }

    let inv_n = 1.0 / n as f64;
    let fp_mean = tape.scale(fp_sq, inv_n);
    let fp_rms = tape.sqrt(fp_mean);
    let hjb_mean = tape.scale(hjb_sq, inv_n);
    let hjb_rms = tape.sqrt(hjb_mean);

    let nu_mean = tape.scale(nu_sum, inv_n);
    let norm_dev = tape.add_const(nu_mean, -1.0);
    let norm_gap = tape.abs(norm_dev);
    let p_mean = tape.scale(p_sum, inv_n);
    let mean_gap = tape.abs(p_mean);

    // Periodicity penalty: per-face value gaps of both networks.
    let periodic = if cfg.exact_periodic {
        tape.constant(0.0)
    } else {
        let mut gap_sq = tape.constant(0.0);
        let faces = n.min(16);
        let mut count = 0usize;
        for axis in 0..d {
            for i in 0..faces {
                let mut x0 = points[i * d..(i + 1) * d].to_vec();
                x0[axis] = 0.0;
                let mut x1 = x0.clone();
                x1[axis] = 1.0;
                for net in [net_nu, net_p] {
                    let v0 = tape.value(net, &x0);
                    let v1 = tape.value(net, &x1);
                    let diff = tape.sub(v0, v1);
                    let sq = tape.mul(diff, diff);
                    gap_sq = tape.add(gap_sq, sq);
                    count += 1;
                }
            }
        }
        let mean = tape.scale(gap_sq, 1.0 / count.max(1) as f64);
        tape.sqrt(mean)
    };

    let w = cfg.weights;
    let mut loss = tape.scale(fp_rms, w.fp);
    let t = tape.scale(hjb_rms, w.hjb);
    loss = tape.add(loss, t);
    let t = tape.scale(periodic, w.periodic);
    loss = tape.add(loss, t);
    let t = tape.scale(norm_gap, w.norm);
    loss = tape.add(loss, t);
    let t = tape.scale(mean_gap, w.mean);
    loss = tape.add(loss, t);

    BatchLoss {
        fp_rms: tape.value_of(fp_rms),
        hjb_rms: tape.value_of(hjb_rms),
        periodic: tape.value_of(periodic),
        norm_gap: tape.value_of(norm_gap),
        mean_gap: tape.value_of(mean_gap),
        loss,
    }
}

/// Loss value and parameter gradient at fixed weights on a given batch,
/// for derivative checks and diagnostics. `params` is the concatenation
/// `[θ_ν | θ_p | λ]`; `points` and `companions` are flat row-major
/// batches of torus points.
pub fn loss_and_grad(
    spec: &ProblemSpec,
    arch_nu: &NetworkArch,
    arch_p: &NetworkArch,
    cfg: &DgmConfig,
    params: &[f64],
    points: &[f64],
    companions: &[f64],
) -> Result<(f64, Vec<f64>), DgmError> {
    spec.validate()?;
    arch_nu.validate()?;
    arch_p.validate()?;
    let n1 = arch_nu.param_count();
    let n2 = arch_p.param_count();
    let mut tape = Tape::new();
    tape.set_params(params);
    let net_nu = tape.register_net(arch_nu.clone(), 0);
    let net_p = tape.register_net(arch_p.clone(), n1);
    let batch = loss_on_tape(spec, &mut tape, net_nu, net_p, n1 + n2, cfg, points, companions);
    let value = tape.value_of(batch.loss);
    let mut grad = vec![0.0; params.len()];
    tape.backward(batch.loss, &mut grad);
    Ok((value, grad))
}

/// Trains the coupled-system solver.
pub fn train_dgm(
    spec: &ProblemSpec,
    arch_nu: &NetworkArch,
    arch_p: &NetworkArch,
    cfg: &DgmConfig,
) -> Result<DgmResult, DgmError> {
    spec.validate()?;
    arch_nu.validate()?;
    arch_p.validate()?;
    let n1 = arch_nu.param_count();
    let n2 = arch_p.param_count();
    let mut params = Vec::with_capacity(n1 + n2 + 1);
    params.extend_from_slice(&init_params(arch_nu, cfg.seed).values);
    params.extend_from_slice(&init_params(arch_p, cfg.seed.wrapping_add(1)).values);
    params.push(0.0);
    let lambda_idx = n1 + n2;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd6_3a11e5);
    let mut tape = Tape::new();
    tape.set_params(&params);
    let net_nu = tape.register_net(arch_nu.clone(), 0);
    let net_p = tape.register_net(arch_p.clone(), n1);
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut grad = vec![0.0; params.len()];
    let mut points = vec![0.0; cfg.batch * spec.d];
    let mut companions = vec![0.0; cfg.batch * spec.d];
    let mut history = Vec::new();
    let mut iterations_run = 0;

    for k in 0..cfg.iterations {
        for v in points.iter_mut().chain(&mut companions) {
            *v = rng.gen::<f64>();
        }
        tape.set_params(&params);
        let batch = loss_on_tape(
            spec, &mut tape, net_nu, net_p, lambda_idx, cfg, &points, &companions,
        );
        let loss_val = tape.value_of(batch.loss);
        grad.iter_mut().for_each(|g| *g = 0.0);
        tape.backward(batch.loss, &mut grad);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss_val.is_finite() || !grad_norm.is_finite() {
            return Err(DgmError::NonFinite { iteration: k });
        }
        let lr = cfg.lr.at(k);
        if k % cfg.log_every == 0 {
            history.push(DgmHistoryRow {
                iteration: k,
                loss: loss_val,
                fp_rms: batch.fp_rms,
                hjb_rms: batch.hjb_rms,
                periodic: batch.periodic,
                norm_gap: batch.norm_gap,
                mean_gap: batch.mean_gap,
                lambda: params[lambda_idx],
                grad_norm,
                lr,
            });
        }
        iterations_run = k + 1;
        opt.step(lr, &mut params, &grad);
    }

    Ok(DgmResult {
        lambda: params[lambda_idx],
        params,
        history,
        iterations_run,
    })
}

pub fn write_dgm_history_csv(path: &Path, history: &[DgmHistoryRow]) -> Result<(), DgmError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "iteration,loss,fp_rms,hjb_rms,periodic,norm_gap,mean_gap,lambda,grad_norm,lr"
    )?;
    for r in history {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.loss,
            r.fp_rms,
            r.hjb_rms,
            r.periodic,
            r.norm_gap,
            r.mean_gap,
            r.lambda,
            r.grad_norm,
            r.lr
        )?;
    }
    Ok(())
}

/// Splits a trained parameter vector back into the solution triple
/// `(ν, p, λ)` as plain fields.
pub fn dgm_fields(
    arch_nu: &NetworkArch,
    arch_p: &NetworkArch,
    params: &[f64],
) -> (Arc<dyn Field>, Arc<dyn Field>, f64) {
    let n1 = arch_nu.param_count();
    let n2 = arch_p.param_count();
    assert_eq!(params.len(), n1 + n2 + 1);
    let u = NeuralField {
        arch: arch_nu.clone(),
        params: ParamVector {
            values: params[..n1].to_vec(),
        },
    };
    let d = arch_nu.input_dim;
    let nu: Arc<dyn Field> = Arc::new(FnField::new(
        d,
        {
            let u = NeuralField {
                arch: u.arch.clone(),
                params: u.params.clone(),
            };
            move |x: &[f64]| u.value(x).exp()
        },
        move |x: &[f64]| {
            let j = u.jet(x);
            let v = j.value.exp();
            let gsq: f64 = j.grad.iter().map(|g| g * g).sum();
            FieldJet {
                value: v,
                grad: j.grad.iter().map(|g| v * g).collect(),
                laplacian: v * (j.laplacian + gsq),
            }
        },
    ));
    let p: Arc<dyn Field> = Arc::new(NeuralField {
        arch: arch_p.clone(),
        params: ParamVector {
            values: params[n1..n1 + n2].to_vec(),
        },
    });
    (nu, p, params[n1 + n2])
}
