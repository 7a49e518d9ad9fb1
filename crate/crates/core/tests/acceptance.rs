//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always printed.
//! Criteria listed in `KNOWN_UNATTAINABLE` are reported as failing but do not
//! fail the process; every other failure does.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use fracdyn::analysis::{
    commensurate_stability, deadbeat_input, eigenvalues, fopid_response, log_frequencies, reconstruct_initial_state,
    Verdict,
};
use fracdyn::estimate::{me_batch, run_estimator, EstimatorConfig, MinEnergyFilter};
use fracdyn::fraccore::{gl_weight, gl_weight_gamma};
use fracdyn::model::{aj_series, augment_p, augment_v, FosModel, LiftKind, MultiTermNetwork, OutputMap};
use fracdyn::mpc::{
    condense, lifted_history, run_closed_loop, solve_horizon, state_energy, uncontrolled_baseline, MpcController,
    MpcProblem,
};
use fracdyn::simulate::{gaussian_noise, simulate_augmented, simulate_fos, simulate_network, transition_matrices, Noise};
use fracdyn::sysid::{identify, ols_spatial, Window};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

/// 1: the magnitude bound `|c_j| <= alpha^j / j!` is violated by the weights
/// themselves (already at `j = 2` for `alpha = 0.1`).
/// 5: on integer-order data the orders 0 and 1 both fit exactly, so the
/// endpoint errors tie at round-off level and bisection keeps the lower half.
const KNOWN_UNATTAINABLE: &[usize] = &[1, 5];

type Outcome = Result<String, String>;

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed <= limit {
        Ok(format!("{detail}, {:.3}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{detail}, runtime {:.3}s exceeds {:?}", elapsed.as_secs_f64(), limit))
    }
}

fn gl_kernel() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut violation = None;
    for i in 1..=19 {
        if i == 10 {
            continue;
        }
        let alpha = i as f64 / 10.0;
        let mut bound = 1.0f64;
        for j in 0..=200usize {
            if j > 0 {
                bound *= alpha / j as f64;
            }
            let rec = gl_weight(alpha, j);
            let gam = gl_weight_gamma(alpha, j).map_err(|e| e.to_string())?;
            worst = worst.max((rec - gam).abs() / rec.abs());
            if rec.abs() > bound && violation.is_none() {
                violation = Some(format!("|c_{j}| = {:.3e} > {alpha}^{j}/{j}! = {bound:.3e} at alpha = {alpha}", rec.abs()));
            }
        }
    }
    let elapsed = start.elapsed();
    if worst > 1e-12 {
        return Err(format!("max relative gap {worst:.2e}"));
    }
    if let Some(v) = violation {
        return Err(format!("max relative gap {worst:.2e}; magnitude bound fails: {v}"));
    }
    within(elapsed, Duration::from_secs(1), format!("max relative gap {worst:.2e}"))
}

fn integer_order_collapse() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(1..=4);
        let m = r.random_range(0..=2);
        let mut model = rand_model(&mut r, n, m, 0.3 / n as f64);
        model = FosModel::new(vec![1.0; n], model.a().clone(), model.b().clone(), model.bw().clone()).unwrap();
        let x0 = rand_vector(&mut r, n, 1.0);
        let u: Vec<_> = (0..100).map(|_| rand_vector(&mut r, m, 1.0)).collect();
        let w: Vec<_> = (0..100).map(|_| rand_vector(&mut r, n, 0.1)).collect();
        let t = simulate_fos(&model, &x0, &u, &Noise::Sequence(w.clone()), 100).map_err(|e| e.to_string())?;
        let lti = lti_simulate(&model, &x0, &u, &w, 100);
        for (a, b) in t.states.iter().zip(&lti) {
            worst = worst.max((a - b).amax() / b.amax().max(1.0));
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max gap {worst:.2e} over 50 models x 100 steps"))
    } else {
        Err(format!("max gap {worst:.2e}"))
    }
}

fn transition_consistency() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = r.random_range(1..=3);
        let alpha = (0..n).map(|_| r.random_range(0.3..1.2)).collect();
        let a = DMatrix::identity(n, n) * -0.1 + rand_matrix(&mut r, n, n, 0.05);
        let model = FosModel::with_identity_noise(alpha, a, DMatrix::zeros(n, 0)).unwrap();
        let x0 = rand_vector(&mut r, n, 1.0);
        let t = simulate_fos(&model, &x0, &[], &Noise::Zero, 200).map_err(|e| e.to_string())?;
        let g = transition_matrices(&model, 200);
        for k in 0..=200 {
            let gap = (&t.states[k] - &g[k] * &x0).norm() / t.states[k].norm().max(1.0);
            worst = worst.max(gap);
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max gap {worst:.2e} for k <= 200 on 10 fixtures"))
    } else {
        Err(format!("max gap {worst:.2e}"))
    }
}

fn controllability_closure() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let (mut worst_db, mut worst_rec) = (0.0f64, 0.0f64);
    let (mut db_count, mut rec_count) = (0, 0);
    while db_count < 25 || rec_count < 25 {
        let n = r.random_range(1..=3);
        let m = r.random_range(1..=2);
        let horizon = r.random_range(n..=8);
        let model = rand_model(&mut r, n, m, 0.5);
        let x0 = rand_vector(&mut r, n, 1.0);
        if db_count < 25 {
            if let Ok(u) = deadbeat_input(&model, model.b(), &x0, horizon) {
                let t = simulate_fos(&model, &x0, &u, &Noise::Zero, horizon).map_err(|e| e.to_string())?;
                worst_db = worst_db.max(t.states[horizon].norm() / x0.norm());
                db_count += 1;
            }
        }
        if rec_count < 25 {
            let q = r.random_range(1..=n);
            let c = rand_matrix(&mut r, q, n, 1.0);
            let u: Vec<_> = (0..horizon).map(|_| rand_vector(&mut r, m, 1.0)).collect();
            let t = simulate_fos(&model, &x0, &u, &Noise::Zero, horizon).map_err(|e| e.to_string())?;
            let y: Vec<_> = t.states.iter().map(|x| &c * x).collect();
            if let Ok(est) = reconstruct_initial_state(&model, model.b(), &c, &u, &y, horizon) {
                worst_rec = worst_rec.max((est - &x0).norm() / x0.norm().max(1.0));
                rec_count += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!("deadbeat residual {worst_db:.2e}, reconstruction error {worst_rec:.2e}");
    if worst_db > 1e-8 || worst_rec > 1e-8 {
        return Err(detail);
    }
    within(elapsed, Duration::from_secs(5), detail)
}

fn order_recovery() -> Outcome {
    let start = Instant::now();
    let eps = 1e-3;
    let mut lines = Vec::new();
    let mut failed = false;
    for (a, alpha) in [(0.2, 0.5), (-0.3, 1.0)] {
        let model = scalar_input_model(a, alpha);
        let u = gaussian_noise(11, 300, 1, 1.0).map_err(|e| e.to_string())?;
        let t = simulate_fos(&model, &DVector::from_element(1, 1.0), &u, &Noise::Zero, 300).map_err(|e| e.to_string())?;
        let res = identify(&t, 300, eps, Window::new(0, 300)).map_err(|e| e.to_string())?;
        let ch = &res.channels[0];
        let flag = if ch.flags.label().is_empty() { String::new() } else { format!(" [{}]", ch.flags.label()) };
        let line = format!("alpha {alpha}: estimate {:.5} in {} iterations{flag}", ch.alpha_hat, ch.iterations);
        if (ch.alpha_hat - alpha).abs() > 2.0 * eps || ch.iterations > 11 {
            failed = true;
        }
        lines.push(line);
    }
    if failed {
        return Err(lines.join("; "));
    }
    within(start.elapsed(), Duration::from_secs(10), lines.join("; "))
}

fn ols_decay() -> Outcome {
    let (a, alpha) = (-0.2, 0.5);
    let model = FosModel::scalar(a, alpha).unwrap();
    let mut medians = Vec::new();
    for k in [200usize, 800, 3200] {
        let mut errs = Vec::new();
        for seed in 0..20u64 {
            let t = simulate_fos(&model, &DVector::from_element(1, 1.0), &[], &Noise::Gaussian { seed, sigma: 0.05 }, k)
                .map_err(|e| e.to_string())?;
            let fit = ols_spatial(&t, &[alpha], Window::full(k), k).map_err(|e| e.to_string())?;
            errs.push(op_norm(&(fit.a - DMatrix::from_element(1, 1, a))));
        }
        errs.sort_by(f64::total_cmp);
        medians.push(0.5 * (errs[9] + errs[10]));
    }
    let detail = format!("medians {:.3e}, {:.3e}, {:.3e} at K = 200, 800, 3200", medians[0], medians[1], medians[2]);
    if medians[0] > medians[1] && medians[1] > medians[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn min_energy_equivalence() -> Outcome {
    // scalar hand example
    let aug = fracdyn::model::AugmentedModel {
        kind: LiftKind::PAugment,
        depth: 1,
        a: DMatrix::from_element(1, 1, 1.0),
        b: DMatrix::zeros(1, 0),
        g: DMatrix::from_element(1, 1, 1.0),
        c_base: OutputMap::Constant(DMatrix::from_element(1, 1, 1.0)),
        n: 1,
        m: 0,
        q: 1,
    };
    let cfg = EstimatorConfig::isotropic(&aug, 1.0, 1.0, 1.0);
    let mut f = MinEnergyFilter::new(aug, cfg).map_err(|e| e.to_string())?;
    let s = f.step(&DVector::zeros(0), &DVector::from_element(1, 1.0)).map_err(|e| e.to_string())?;
    let hand = [s.m.as_ref().unwrap()[(0, 0)], s.gain.as_ref().unwrap()[(0, 0)], s.xhat[0], s.p[(0, 0)]];
    let expect = [2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
    if hand.iter().zip(&expect).any(|(a, b)| (a - b).abs() > 1e-15) {
        return Err(format!("hand example gives {hand:?}"));
    }
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = r.random_range(1..=3);
        let m = r.random_range(0..=1);
        let v = r.random_range(1..=4);
        let steps = r.random_range(5..=25);
        let model = rand_model(&mut r, n, m, 0.2);
        let q = r.random_range(1..=n);
        let net = MultiTermNetwork::from_fos(&model, rand_matrix(&mut r, q, n, 1.0)).map_err(|e| e.to_string())?;
        let aug = augment_v(&net, v).map_err(|e| e.to_string())?;
        let cfg = EstimatorConfig::isotropic(&aug, 0.5, 0.2, 2.0);
        let u: Vec<_> = (0..steps).map(|_| rand_vector(&mut r, m, 1.0)).collect();
        let y: Vec<_> = (0..steps).map(|_| rand_vector(&mut r, q, 1.0)).collect();
        let batch = me_batch(&aug, &cfg, &u, &y).map_err(|e| e.to_string())?;
        let mut filt = MinEnergyFilter::new(aug, cfg).map_err(|e| e.to_string())?;
        for k in 0..steps {
            filt.step(&u[k], &y[k]).map_err(|e| e.to_string())?;
        }
        let xb = &batch.xhat[steps];
        worst = worst.max((&filt.state().xhat - xb).norm() / (1.0 + xb.norm()));
    }
    if worst <= 1e-6 {
        Ok(format!("hand example exact; max final-step gap {worst:.2e} on 10 fixtures"))
    } else {
        Err(format!("max final-step gap {worst:.2e}"))
    }
}

fn v_monotonicity() -> Outcome {
    let net = seizure_network();
    let steps = 400;
    let x0 = DVector::from_element(4, 1.0);
    let mut t = simulate_network(&net, &x0, &[], &Noise::Gaussian { seed: 0, sigma: 1.0 }, steps).map_err(|e| e.to_string())?;
    let v = gaussian_noise(100, steps + 1, 4, 0.01).map_err(|e| e.to_string())?;
    t.outputs = Some(t.states.iter().zip(&v).map(|(x, e)| x + e).collect());
    let mut errs = Vec::new();
    for depth in [2usize, 10, 20] {
        let aug = augment_v(&net, depth).map_err(|e| e.to_string())?;
        let cfg = EstimatorConfig::isotropic(&aug, 0.05 * 0.05, 1e-4, 1.0);
        let run = run_estimator(&net, depth, &cfg, &t).map_err(|e| e.to_string())?;
        errs.push(run.tail_mean_error(100).unwrap());
    }
    let detail = format!("tail mean error {:.4e}, {:.4e}, {:.4e} for v = 2, 10, 20", errs[0], errs[1], errs[2]);
    if errs[0] >= errs[1] && errs[1] >= errs[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mpc_optimality() -> Outcome {
    let plant = FosModel::scalar(0.2, 0.5).unwrap();
    let plant = plant.with_b(DMatrix::from_element(1, 1, 1.0)).map_err(|e| e.to_string())?;
    let hist: Vec<DVector<f64>> = [1.0, 0.4, -0.3].iter().map(|&v| DVector::from_element(1, v)).collect();
    let prob = MpcProblem::new(1, 1, 3, 1, 1);
    let sol = solve_horizon(&prob, &plant, &hist).map_err(|e| e.to_string())?;
    let aj = aj_series(&plant, 2);
    let drift = aj[0][(0, 0)] * -0.3 + aj[1][(0, 0)] * 0.4 + aj[2][(0, 0)] * 1.0;
    let closed = -drift / 2.0;
    let gap = (sol.inputs[0][0] - closed).abs();
    if gap > 1e-10 {
        return Err(format!("one-step solution off closed form by {gap:.2e}"));
    }
    let hi = 0.1f64.min(closed.abs() / 2.0);
    let clipped = solve_horizon(&prob.clone().with_bounds(-hi, hi), &plant, &hist).map_err(|e| e.to_string())?;
    if clipped.inputs[0][0] != hi.copysign(closed) || !clipped.any_active() {
        return Err(format!("clipped case gives {} (bound {hi})", clipped.inputs[0][0]));
    }
    let model = seizure_plant();
    let aug = augment_p(&model, 6).map_err(|e| e.to_string())?;
    let cond = condense(&aug, 8);
    let mut r = rng(9);
    let xt = rand_vector(&mut r, aug.dim(), 1.0);
    let us = rand_vector(&mut r, 8, 1.0);
    let pred = &cond.f * &xt + &cond.gamma * &us;
    let inputs: Vec<_> = (0..8).map(|j| us.rows(j, 1).into_owned()).collect();
    let sim = simulate_augmented(&aug, &xt, &inputs, &Noise::Zero, 8).map_err(|e| e.to_string())?;
    let mut cond_gap = 0.0f64;
    for j in 1..=8 {
        cond_gap = cond_gap.max((pred.rows((j - 1) * 4, 4) - &sim.states[j]).amax());
    }
    if cond_gap > 1e-10 {
        return Err(format!("condensed prediction gap {cond_gap:.2e}"));
    }
    let problem = MpcProblem::new(4, 1, 10, 10, 8).with_bounds(-1.0, 1.0);
    let ctrl = MpcController::new(problem.clone(), &model).map_err(|e| e.to_string())?;
    let run = run_closed_loop(&model, &problem, &DVector::from_element(4, 1.0), 200, &Noise::Gaussian { seed: 5, sigma: 1.0 })
        .map_err(|e| e.to_string())?;
    let mut worst = f64::NEG_INFINITY;
    for (event, sol) in run.solves.iter().zip(&run.solutions) {
        let xt = lifted_history(&run.trajectory.states[..=event.step], 4, 10).map_err(|e| e.to_string())?;
        let zero = ctrl.cost_of(&xt, &DVector::zeros(10));
        worst = worst.max(sol.cost - zero);
    }
    let detail = format!(
        "closed-form gap {gap:.2e}, clipped at bound, condensing gap {cond_gap:.2e}, max cost(u*) - cost(0) = {worst:.2e} over {} solves",
        run.solves.len()
    );
    if worst <= 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_loop() -> Outcome {
    let start = Instant::now();
    let steps = 1000;
    let plant = scalar_mpc_plant();
    let prob = MpcProblem::new(1, 1, 15, 20, 10).with_bounds(-5.0, 5.0);
    let noise = Noise::Gaussian { seed: 2024, sigma: 1.0 };
    let x0 = DVector::zeros(1);
    let run = run_closed_loop(&plant, &prob, &x0, steps, &noise).map_err(|e| e.to_string())?;
    let (base, checksum) = uncontrolled_baseline(&plant, &x0, steps, &noise).map_err(|e| e.to_string())?;
    if checksum != run.noise_checksum {
        return Err("baseline consumed a different noise sequence".into());
    }
    let (ec, eb) = (run.energy(), state_energy(&base));
    if !(ec < eb) {
        return Err(format!("scalar plant: controlled energy {ec:.4e} not below baseline {eb:.4e}"));
    }
    let plant = seizure_plant();
    let prob = MpcProblem::new(4, 1, 10, 10, 8).with_bounds(-100.0, 100.0);
    let run = run_closed_loop(&plant, &prob, &DVector::from_element(4, 1.0), steps, &Noise::Gaussian { seed: 2024, sigma: 1.0 })
        .map_err(|e| e.to_string())?;
    let max_state = run.trajectory.states.iter().map(|x| x.amax()).fold(0.0, f64::max);
    let max_input = run.trajectory.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max);
    let detail = format!(
        "scalar energy {ec:.4e} vs baseline {eb:.4e}; four-channel max |x| {max_state:.3}, max |u| {max_input:.3}"
    );
    if !max_state.is_finite() || max_state > 1e3 || max_input > 100.0 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn fopid_and_stability() -> Outcome {
    let omegas = log_frequencies(1e-2, 1e2, 400);
    let (kp, ki, kd) = (1.3, 0.7, 0.2);
    let pts = fopid_response(kp, ki, kd, 1.0, 1.0, &omegas).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (p, &w) in pts.iter().zip(&omegas) {
        let s = Complex64::new(0.0, w);
        let pid = kp + ki / s + kd * s;
        worst = worst.max((p.value() - pid).norm() / pid.norm());
    }
    if worst > 1e-12 {
        return Err(format!("PID response gap {worst:.2e}"));
    }
    let mut r = rng(11);
    let mut agree = 0;
    for _ in 0..100 {
        let n = r.random_range(1..=5);
        let a = rand_matrix(&mut r, n, n, 1.0);
        let rep = commensurate_stability(&a, 1.0).map_err(|e| e.to_string())?;
        let lhp = eigenvalues(&a).map_err(|e| e.to_string())?.iter().all(|z| z.re < 0.0);
        if (rep.verdict == Verdict::Stable) == lhp {
            agree += 1;
        }
    }
    let detail = format!("PID gap {worst:.2e}; verdict matches left-half-plane test on {agree}/100 matrices");
    if agree == 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fracdyn"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_pass(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::write(
        dir.join("model.json"),
        "{\"n\":2,\"m\":1,\"alpha\":[0.6,0.9],\"A\":[[-0.1,0.05],[0.02,-0.2]],\"B\":[[1.0],[0.5]],\"Bw\":[[0.1,0.0],[0.0,0.1]]}",
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("scenario.json"),
        "{\"model\":\"model.json\",\"x0\":[1,1],\"K\":60,\"seed\":3,\"depth\":8,\"horizon\":10,\"control_horizon\":5,\"u_lo\":-2,\"u_hi\":2}",
    )
    .map_err(|e| e.to_string())?;
    run_cli(dir, &["simulate", "--model", "model.json", "--steps", "200", "--seed", "7", "--x0", "1,-1", "--output-sigma", "0.01", "--out", "traj.csv"])?;
    run_cli(dir, &["identify", "--trajectory", "traj.csv", "--window", "0,150", "--out", "id.json"])?;
    run_cli(dir, &["simulate", "--model", "id.json", "--steps", "50", "--seed", "8", "--reference", "traj.csv", "--out", "traj2.csv"])?;
    run_cli(dir, &["estimate", "--network", "model.json", "--trajectory", "traj.csv", "--depth", "5", "--out", "est.csv"])?;
    run_cli(dir, &["mpc", "--scenario", "scenario.json", "--out", "mpc.csv"])?;
    run_cli(dir, &["analyze", "bode", "--fopid", "1,0.5,0.2,0.7,0.9", "--out", "bode.csv"])?;
    run_cli(dir, &["analyze", "stability", "--model", "model.json", "--out", "stab.json"])?;
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?)))
        .collect()
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = cli_pass(a.path())?;
    let second = cli_pass(b.path())?;
    let third = cli_pass(a.path())?;
    if first.len() < 16 {
        return Err(format!("only {} files produced", first.len()));
    }
    for other in [&second, &third] {
        if first != *other {
            let diff: Vec<_> = first
                .iter()
                .zip(other.iter())
                .filter(|(x, y)| x != y)
                .map(|(x, _)| x.0.clone())
                .collect();
            return Err(format!("outputs differ: {diff:?}"));
        }
    }
    Ok(format!("{} files byte-identical across three runs", first.len()))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 12] = [
        (1, "GL kernel cross-check", gl_kernel),
        (2, "integer-order collapse", integer_order_collapse),
        (3, "transition-matrix consistency", transition_consistency),
        (4, "controllability/observability closure", controllability_closure),
        (5, "order recovery by bisection", order_recovery),
        (6, "OLS error decay", ols_decay),
        (7, "minimum-energy equivalence", min_energy_equivalence),
        (8, "v-monotonicity", v_monotonicity),
        (9, "MPC optimality and bookkeeping", mpc_optimality),
        (10, "closed loop on published parameters", closed_loop),
        (11, "FOPID and integer-order stability", fopid_and_stability),
        (12, "end-to-end determinism", cli_determinism),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) if KNOWN_UNATTAINABLE.contains(&id) => {
                println!("criterion {id:>2} FAIL  {name}: {detail} (known unattainable)")
            }
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {name}: {detail}");
                unexpected += 1;
            }
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
