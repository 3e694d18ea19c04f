//! End-to-end acceptance gates: solver accuracy against closed-form and
//! grid references, estimator convergence rates, derivative consistency,
//! and particle-level validation. Each test prints one PASS/FAIL line
//! with the measured numbers; run with `--nocapture` to see them on
//! success. These are long-running accuracy checks, so build them
//! optimized (the workspace test profile already does).

use std::sync::Arc;
use std::time::Instant;

use ergo_mfc::algo1::{
    cost_and_grad, empirical_cost, h_from_p, recover_solution, train, trained_field, SampleBatch,
    TrainConfig,
};
use ergo_mfc::bench::{quadrature_cost, relative_l2, solve_fd, FdConfig};
use ergo_mfc::dgm::{
    dgm_fields, loss_and_grad, residual_fp, residual_hjb, train_dgm, DgmConfig,
};
use ergo_mfc::field::{finite_difference_jet, Field};
use ergo_mfc::model::{testcase, TestCase};
use ergo_mfc::net::{eval_jet, init_params, NetworkArch, ParamVector};
use ergo_mfc::opt::{OptMethod, Optimizer};
use ergo_mfc::tape::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "criterion {criterion:2}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn exact_p_mean(case: &TestCase) -> f64 {
    let exact = case.exact.as_ref().unwrap();
    let p = Arc::clone(&exact.p);
    let d = case.spec.d;
    if d <= 3 {
        let n = if d == 1 { 4096 } else { 64 };
        grid_mean_fallback(d, n, |x| p.value(x))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..100_000 {
            for xi in x.iter_mut() {
                *xi = rng.gen::<f64>();
            }
            acc += p.value(&x);
        }
        acc / 100_000.0
    }
}

fn grid_mean_fallback(d: usize, n: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
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

/// Supervised least-squares fit of a network to the jet of a target
/// field by Adam on fresh uniform batches. Fitting values, gradients and
/// (down-weighted) Laplacians makes the approximation accurate in the
/// norms the solution recovery actually uses.
fn fit_field(
    arch: &NetworkArch,
    target: &dyn Field,
    iters: u64,
    lr: f64,
    seed: u64,
) -> ParamVector {
    let mut params = init_params(arch, seed);
    let mut tape = Tape::new();
    tape.set_params(&params.values);
    let net = tape.register_net(arch.clone(), 0);
    let mut opt = Optimizer::new(OptMethod::adam(), params.len());
    let mut grad = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf17);
    let d = arch.input_dim;
    let mut x = vec![0.0; d];
    let batch = 64;
    for k in 0..iters {
        tape.set_params(&params.values);
        let mut acc = tape.constant(0.0);
        for _ in 0..batch {
            for xi in x.iter_mut() {
                *xi = rng.gen::<f64>();
            }
            let tj = target.jet(&x);
            let j = tape.jet(net, &x);
            let rv = tape.add_const(j.value(), -tj.value);
            let sv = tape.mul(rv, rv);
            acc = tape.add(acc, sv);
            for kk in 0..d {
                let rg = tape.add_const(j.grad(kk), -tj.grad[kk]);
                let sg = tape.mul(rg, rg);
                acc = tape.add(acc, sg);
            }
            let rl = tape.add_const(j.laplacian(), -tj.laplacian);
            let sl = tape.mul(rl, rl);
            let sl = tape.scale(sl, 0.05);
            acc = tape.add(acc, sl);
        }
        let loss = tape.scale(acc, 1.0 / batch as f64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        tape.backward(loss, &mut grad);
        let step_lr = lr / (1.0 + 1e-3 * k as f64);
        opt.step(step_lr, &mut params.values, &grad);
    }
    params
}

#[test]
fn criterion_01_residuals_vanish_on_exact_solutions() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for id in [4u32, 5] {
        for d in [1usize, 2] {
            let case = testcase(id, d).unwrap();
            let exact = case.exact.as_ref().unwrap();
            let nu = exact.nu_field();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + id as u64 + d as u64);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
                let r_fp = residual_fp(&case.spec, nu.as_ref(), exact.p.as_ref(), &x);
                let r_hjb = residual_hjb(
                    &case.spec,
                    nu.as_ref(),
                    exact.p.as_ref(),
                    exact.lambda(),
                    &x,
                    0.0,
                    0.0,
                )
                .unwrap();
                worst = worst.max(r_fp.abs()).max(r_hjb.abs());
            }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        1,
        worst < 1e-8 && elapsed < 1.0,
        &format!("max |residual| = {worst:.2e} over 4 cases x 1000 points in {elapsed:.2}s"),
    );
}

#[test]
fn criterion_02_lambda_recovery() {
    let t0 = Instant::now();
    let case = testcase(4, 1).unwrap();
    let exact = case.exact.as_ref().unwrap();
    let lambda_true = exact.lambda();

    // Route 1: fit a sine network to the optimal reparametrized field and
    // read the solution back off the network.
    let h_star = h_from_p(&case.spec, Arc::clone(&exact.p));
    let arch = NetworkArch::sin_periodic(1, 12);
    let params = fit_field(&arch, h_star.as_ref(), 30_000, 0.02, 1);
    let net_report = recover_solution(&case.spec, trained_field(&arch, &params)).unwrap();
    let net_err = (net_report.lambda - lambda_true).abs();

    // Route 2: grid solver.
    let fd = solve_fd(&case.spec, &FdConfig::default()).unwrap();
    let fd_err = (fd.lambda - lambda_true).abs();

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        2,
        net_err < 1e-3 && fd_err < 1e-3 && elapsed < 10.0,
        &format!(
            "lambda_true = {lambda_true:.6}, |net - true| = {net_err:.2e}, \
             |fd - true| = {fd_err:.2e} in {elapsed:.1}s"
        ),
    );
}

#[test]
fn criterion_03_fd_matches_exact_solution() {
    let t0 = Instant::now();
    let case = testcase(4, 1).unwrap();
    let exact = case.exact.as_ref().unwrap();
    let sol = solve_fd(&case.spec, &FdConfig { m: 512, ..FdConfig::default() }).unwrap();
    let p_shift = exact_p_mean(&case);
    let p_err = relative_l2(
        &|x| sol.p_at(x[0]),
        &|x| exact.p.value(x) - p_shift,
        1,
        4000,
        11,
    );
    let nu_err = relative_l2(&|x| sol.nu_at(x[0]), &|x| exact.nu_at(x), 1, 4000, 11);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        3,
        p_err < 1e-3 && nu_err < 1e-3 && elapsed < 10.0,
        &format!("rel-L2: p = {p_err:.2e}, nu = {nu_err:.2e} at M=512 in {elapsed:.1}s"),
    );
}

fn direct_case_vs_fd(id: u32, iterations: u64) -> (usize, Vec<(f64, f64)>, f64) {
    let case = testcase(id, 1).unwrap();
    let sol = solve_fd(&case.spec, &FdConfig::default()).unwrap();
    let arch = NetworkArch::tanh_embedded(1, &[32]);
    let mut passes = 0;
    let mut pairs = Vec::new();
    let t0 = Instant::now();
    for seed in 0..5u64 {
        let mut cfg = TrainConfig::new(iterations, 1000, 0.01, seed);
        cfg.batch_normalizer = 1000;
        cfg.lr.decay = 1e-3;
        cfg.lr.power = 0.5;
        let result = train(&case.spec, &arch, &cfg).unwrap();
        let report = recover_solution(&case.spec, trained_field(&arch, &result.params)).unwrap();
        let nu_err = relative_l2(&|x| report.nu.value(x), &|x| sol.nu_at(x[0]), 1, 4000, 2);
        let p_err = relative_l2(&|x| report.p.value(x), &|x| sol.p_at(x[0]), 1, 4000, 2);
        if nu_err < 0.1 && p_err < 0.1 {
            passes += 1;
        }
        pairs.push((nu_err, p_err));
    }
    (passes, pairs, t0.elapsed().as_secs_f64())
}

#[test]
fn criterion_04_direct_solver_on_t1_t2() {
    let mut all = true;
    let mut detail = String::new();
    for id in [1u32, 2] {
        let (passes, pairs, elapsed) = direct_case_vs_fd(id, 12_000);
        let ok = passes >= 4 && elapsed < 1200.0;
        all &= ok;
        detail.push_str(&format!(
            "T{id}: {passes}/5 seeds under 0.1 (errors {pairs:.3?}) in {elapsed:.0}s; "
        ));
    }
    report(4, all, detail.trim_end_matches("; "));
}

#[test]
fn criterion_05_dgm_on_game() {
    let t0 = Instant::now();
    let case = testcase(3, 1).unwrap();
    let sol = solve_fd(&case.spec, &FdConfig::default()).unwrap();
    let arch_nu = NetworkArch::tanh_embedded(1, &[16]);
    let arch_p = NetworkArch::tanh_embedded(1, &[16]);
    let mut passes = 0;
    let mut errs = Vec::new();
    for seed in 0..5u64 {
        let mut cfg = DgmConfig::new(5000, 256, 0.01, seed);
        cfg.lr.decay = 1e-3;
        cfg.lr.power = 0.5;
        let result = train_dgm(&case.spec, &arch_nu, &arch_p, &cfg).unwrap();
        let (nu, _p, _lambda) = dgm_fields(&arch_nu, &arch_p, &result.params);
        let nu_err = relative_l2(&|x| nu.value(x), &|x| sol.nu_at(x[0]), 1, 4000, 2);
        if nu_err < 0.1 {
            passes += 1;
        }
        errs.push(nu_err);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        5,
        passes >= 4 && elapsed < 1200.0,
        &format!("{passes}/5 seeds under 0.1 (nu errors {errs:.3?}) in {elapsed:.0}s"),
    );
}

#[test]
fn criterion_06_high_dimensional_improvement() {
    let t0 = Instant::now();
    let case = testcase(4, 4).unwrap();
    let exact = case.exact.as_ref().unwrap();
    let p_exact = Arc::clone(&exact.p);
    // The zero field recovers p = 0, for which the relative L2 error
    // against the exact adjoint is exactly 1.
    let baseline = 1.0;
    let arch = NetworkArch::tanh_embedded(4, &[32]);
    let mut cfg = TrainConfig::new(5000, 500, 0.01, 1);
    cfg.batch_normalizer = 500;
    cfg.lr.decay = 1e-3;
    cfg.lr.power = 0.5;
    let result = train(&case.spec, &arch, &cfg).unwrap();
    let rec = recover_solution(&case.spec, trained_field(&arch, &result.params)).unwrap();
    let p_err = relative_l2(&|x| rec.p.value(x), &|x| p_exact.value(x), 4, 4000, 2);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        6,
        p_err * 5.0 <= baseline && elapsed < 3600.0,
        &format!("d=4 p error {p_err:.3} vs zero-field baseline {baseline:.1} ({:.1}x) in {elapsed:.0}s",
            baseline / p_err),
    );
}

#[test]
fn criterion_07_estimator_convergence_rate() {
    let t0 = Instant::now();
    let case = testcase(4, 1).unwrap();
    let exact = case.exact.as_ref().unwrap();
    let h_star = h_from_p(&case.spec, Arc::clone(&exact.p));
    let nu = exact.nu_field();
    let j_ref = quadrature_cost(&case.spec, nu.as_ref(), exact.p.as_ref(), 8192).unwrap();

    let sizes = [100usize, 1000, 10_000];
    let mut log_l = Vec::new();
    let mut log_dev = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &l in &sizes {
        let mut batch = SampleBatch::new(1, l, l);
        let mut acc = 0.0;
        for _ in 0..200 {
            batch.redraw(&mut rng);
            let (j, _) = empirical_cost(&case.spec, h_star.as_ref(), &batch, 50.0).unwrap();
            acc += (j - j_ref).abs();
        }
        log_l.push((l as f64).ln());
        log_dev.push((acc / 200.0).ln());
    }
    // Least-squares slope in log-log coordinates.
    let n = log_l.len() as f64;
    let mx = log_l.iter().sum::<f64>() / n;
    let my = log_dev.iter().sum::<f64>() / n;
    let sxy: f64 = log_l.iter().zip(&log_dev).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = log_l.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        7,
        (-0.65..=-0.35).contains(&slope) && elapsed < 300.0,
        &format!("log-log slope = {slope:.3} over L in {{100, 1000, 10000}} in {elapsed:.0}s"),
    );
}

#[test]
fn criterion_08_autodiff_vs_finite_differences() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(88);

    // Network jets against finite differences of the value.
    for i in 0..40 {
        let d = 1 + (i % 3);
        let arch = if i % 2 == 0 {
            NetworkArch::sin_periodic(d, 6)
        } else {
            NetworkArch::tanh_embedded(d, &[5, 4])
        };
        let mut params = init_params(&arch, 1000 + i as u64);
        for v in params.values.iter_mut() {
            *v += 0.3 * rng.gen::<f64>();
        }
        let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let net = trained_field(&arch, &params);
        let jet = eval_jet(&arch, &params, &x);
        let fd = finite_difference_jet(net.as_ref(), &x, 1e-4);
        let scale = 1.0
            + jet
                .grad
                .iter()
                .fold(jet.value.abs().max(jet.laplacian.abs()), |a, g| a.max(g.abs()));
        for k in 0..d {
            worst = worst.max((jet.grad[k] - fd.grad[k]).abs() / scale);
        }
        worst = worst.max((jet.laplacian - fd.laplacian).abs() / scale);
    }

    // Estimator gradient against central differences of the tape-free
    // estimator, small instances.
    for i in 0..30u64 {
        let id = 1 + (i % 2) as u32;
        let case = testcase(id, 1).unwrap();
        let arch = NetworkArch::sin_periodic(1, 4);
        let mut params = init_params(&arch, 2000 + i);
        for v in params.values.iter_mut() {
            *v += 0.2 * rng.gen::<f64>();
        }
        let mut batch = SampleBatch::new(1, 8, 8);
        batch.redraw(&mut rng);
        let (_, grad) = cost_and_grad(&case.spec, &arch, &params, &batch, 50.0).unwrap();
        let eps = 1e-6;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus.values[k] += eps;
            let mut minus = params.clone();
            minus.values[k] -= eps;
            let (jp, _) =
                empirical_cost(&case.spec, trained_field(&arch, &plus).as_ref(), &batch, 50.0)
                    .unwrap();
            let (jm, _) =
                empirical_cost(&case.spec, trained_field(&arch, &minus).as_ref(), &batch, 50.0)
                    .unwrap();
            let fd = (jp - jm) / (2.0 * eps);
            worst = worst.max((grad[k] - fd).abs() / (1.0 + fd.abs()));
        }
    }

    // DGM loss gradient against central differences of the loss value.
    for i in 0..30u64 {
        let id = 3 + (i % 3) as u32;
        let case = testcase(id, 1).unwrap();
        let arch_nu = NetworkArch::sin_periodic(1, 3);
        let arch_p = NetworkArch::sin_periodic(1, 3);
        let cfg = DgmConfig::new(1, 8, 0.01, 3000 + i);
        let n = arch_nu.param_count() + arch_p.param_count() + 1;
        let mut params: Vec<f64> = Vec::with_capacity(n);
        params.extend_from_slice(&init_params(&arch_nu, 3000 + i).values);
        params.extend_from_slice(&init_params(&arch_p, 3100 + i).values);
        params.push(0.1);
        for v in params.iter_mut() {
            *v += 0.2 * rng.gen::<f64>();
        }
        let points: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let companions: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let (_, grad) = loss_and_grad(
            &case.spec, &arch_nu, &arch_p, &cfg, &params, &points, &companions,
        )
        .unwrap();
        let eps = 1e-6;
        for k in 0..n {
            let mut plus = params.clone();
            plus[k] += eps;
            let mut minus = params.clone();
            minus[k] -= eps;
            let (lp, _) = loss_and_grad(
                &case.spec, &arch_nu, &arch_p, &cfg, &plus, &points, &companions,
            )
            .unwrap();
            let (lm, _) = loss_and_grad(
                &case.spec, &arch_nu, &arch_p, &cfg, &minus, &points, &companions,
            )
            .unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            worst = worst.max((grad[k] - fd).abs() / (1.0 + fd.abs()));
        }
    }

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        8,
        worst < 1e-5 && elapsed < 120.0,
        &format!("max relative deviation {worst:.2e} over 100 instances in {elapsed:.0}s"),
    );
}

#[test]
fn criterion_09_particles_follow_the_optimal_law() {
    let t0 = Instant::now();
    let case = testcase(4, 1).unwrap();
    let exact = case.exact.as_ref().unwrap();
    let nu = exact.nu_field();
    let j_ref = quadrature_cost(&case.spec, nu.as_ref(), exact.p.as_ref(), 4096).unwrap();
    // The Euler-Maruyama invariant-measure bias on the cost is large for
    // this problem (the cost is a small difference of +-40-scale terms),
    // so a small step size matters much more than a long horizon.
    let cfg = ergo_mfc::sde::SimConfig {
        particles: 3000,
        dt: 5e-5,
        steps: 500_000,
        burn_in: 100_000,
        bins: 64,
        cost_stride: 16,
        seed: 1,
    };
    let result = ergo_mfc::sde::simulate(&case.spec, exact.p.as_ref(), &cfg).unwrap();
    let tv = ergo_mfc::sde::tv_distance(&result.histogram, |x| exact.nu_at(&[x]));
    let cost_rel = (result.time_avg_cost - j_ref).abs() / j_ref.abs();
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        9,
        tv < 0.05 && cost_rel < 0.05 && elapsed < 300.0,
        &format!("TV = {tv:.3}, relative cost deviation = {cost_rel:.3} in {elapsed:.0}s"),
    );
}

#[test]
fn criterion_10_error_improves_with_width() {
    let t0 = Instant::now();
    let case = testcase(5, 1).unwrap();
    let exact = case.exact.as_ref().unwrap();
    // Width-fair training: with plain SGD both the kernel conditioning and
    // the coherent sampling noise scale linearly with the number of units,
    // so lr/units keeps convergence speed and noise floor comparable, and
    // Polyak averaging of the tail removes most of the residual wander.
    let mut medians = Vec::new();
    for units in [10usize, 20, 30] {
        let mut errs = Vec::new();
        for seed in 0..10u64 {
            let arch = NetworkArch::sin_periodic(1, units);
            let mut cfg = TrainConfig::new(8000, 1000, 0.05 / units as f64, seed);
            cfg.optimizer = OptMethod::Sgd;
            cfg.lr.decay = 1e-3;
            cfg.lr.power = 1.0;
            cfg.average_tail = 0.25;
            let result = train(&case.spec, &arch, &cfg).unwrap();
            let rec = recover_solution(&case.spec, trained_field(&arch, &result.params)).unwrap();
            let p_err = relative_l2(&|x| rec.p.value(x), &|x| exact.p.value(x), 1, 4000, 2);
            errs.push(p_err);
        }
        errs.sort_by(f64::total_cmp);
        medians.push((errs[4] + errs[5]) / 2.0);
    }
    let monotone = medians[0] >= medians[1] && medians[1] >= medians[2];
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        10,
        monotone && elapsed < 3600.0,
        &format!("median p errors by width {{10, 20, 30}} = {medians:.4?} in {elapsed:.0}s"),
    );
}
