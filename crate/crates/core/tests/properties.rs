mod common;

use common::*;
use fracdyn::analysis::{controllability_gramian, tf_eval, TransferFunction};
use fracdyn::estimate::{EstimatorConfig, MinEnergyFilter};
use fracdyn::fraccore::{frac_difference, gl_weight};
use fracdyn::linalg::min_sym_eigenvalue;
use fracdyn::model::{aj_series, augment_p, augment_v, FosModel, MultiTermNetwork};
use fracdyn::mpc::{condense, lifted_history, run_closed_loop, MpcController, MpcProblem};
use fracdyn::simulate::{simulate_fos, simulate_fos_with, Noise, SimOptions};
use fracdyn::sysid::{identify, Window};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn difference_is_linear(seed in any::<u64>(), alpha in 0.05f64..1.95, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        for k in 0..32 {
            let dz = frac_difference(&[z.clone()], &[alpha], k).unwrap()[0];
            let dx = frac_difference(&[x.clone()], &[alpha], k).unwrap()[0];
            let dy = frac_difference(&[y.clone()], &[alpha], k).unwrap()[0];
            prop_assert!((dz - (a * dx + b * dy)).abs() <= 1e-12 * (1.0 + dz.abs()));
        }
    }

    #[test]
    fn partial_sums_match_binomial(alpha in 0.01f64..1.99) {
        let mut sum = 0.0;
        let mut binom = 1.0;
        for j in 0..=100usize {
            if j > 0 {
                binom *= (alpha - 1.0 - j as f64 + 1.0) / j as f64;
            }
            sum += gl_weight(alpha, j);
            let expect = if j % 2 == 0 { binom } else { -binom };
            prop_assert!((sum - expect).abs() <= 1e-12 * expect.abs().max(1.0), "J = {}", j);
        }
    }

    #[test]
    fn weights_absolutely_summable(alpha in 0.01f64..1.99) {
        let total: f64 = (0..=2000).map(|j| gl_weight(alpha, j).abs()).sum();
        prop_assert!(total <= 2.0f64.max(2.0 * alpha) + 1e-12);
    }

    #[test]
    fn leading_matrix_sign(seed in any::<u64>(), n in 1usize..4) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, 1, 0.3);
        let aj = aj_series(&model, 3);
        let expect = model.a() + DMatrix::from_diagonal(&DVector::from_column_slice(model.alpha()));
        prop_assert!((&aj[0] - expect).amax() == 0.0);
        let x0 = rand_vector(&mut r, n, 1.0);
        let t = simulate_fos(&model, &x0, &[], &Noise::Zero, 20).unwrap();
        let series: Vec<Vec<f64>> = t.state_channels();
        for k in 0..20 {
            let lhs = DVector::from_vec(frac_difference(&series, model.alpha(), k + 1).unwrap());
            let rhs = model.a() * &t.states[k];
            prop_assert!((lhs - &rhs).amax() <= 1e-10 * (1.0 + rhs.amax()));
        }
    }

    #[test]
    fn lift_square_structured(seed in any::<u64>(), n in 1usize..4, p in 1usize..6) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, 1, 0.5);
        let aug = augment_p(&model, p).unwrap();
        let dense = &aug.a * &aug.a;
        let structured = aug.apply(&aug.a);
        prop_assert!((dense - structured).amax() <= 1e-12);
    }

    #[test]
    fn model_json_roundtrip(seed in any::<u64>(), n in 1usize..5, m in 0usize..3) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, m, 10.0);
        let text = model.to_json();
        let back = FosModel::from_json(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn superposition(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, m, 0.2);
        let x0 = rand_vector(&mut r, n, 1.0);
        let u: Vec<_> = (0..30).map(|_| rand_vector(&mut r, m, 1.0)).collect();
        let both = simulate_fos(&model, &x0, &u, &Noise::Zero, 30).unwrap();
        let free = simulate_fos(&model, &x0, &[], &Noise::Zero, 30).unwrap();
        let forced = simulate_fos(&model, &DVector::zeros(n), &u, &Noise::Zero, 30).unwrap();
        for k in 0..=30 {
            let sum = &free.states[k] + &forced.states[k];
            prop_assert!((&both.states[k] - sum).amax() <= 1e-10 * (1.0 + both.states[k].amax()));
        }
    }

    #[test]
    fn truncation_monotone(seed in any::<u64>(), n in 1usize..3, p1 in 1usize..20, extra in 1usize..20) {
        let mut r = rng(seed);
        let alpha = (0..n).map(|_| r.random_range(0.1..0.9)).collect();
        let a = DMatrix::identity(n, n) * -0.05 + rand_matrix(&mut r, n, n, 0.02);
        let model = FosModel::with_identity_noise(alpha, a, DMatrix::from_element(n, 1, 1.0)).unwrap();
        let x0 = rand_vector(&mut r, n, 1.0).abs();
        let steps = 60;
        let u = vec![DVector::from_element(1, 0.1); steps];
        let full = simulate_fos(&model, &x0, &u, &Noise::Zero, steps).unwrap();
        let err = |p: usize| {
            let opts = SimOptions { memory_cap: Some(p), dt: None };
            let t = simulate_fos_with(&model, &x0, &u, &Noise::Zero, steps, &opts).unwrap();
            t.states.iter().zip(&full.states).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
        };
        let p2 = (p1 + extra).min(steps);
        prop_assert!(err(p2) <= err(p1) + 1e-12);
    }

    #[test]
    fn gramian_symmetric_psd(seed in any::<u64>(), n in 1usize..4, horizon in 1usize..8) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, 2, 0.5);
        if let Ok(rep) = controllability_gramian(&model, model.b(), horizon) {
            let w = &rep.matrix;
            prop_assert!((w - w.transpose()).amax() == 0.0);
            prop_assert!(min_sym_eigenvalue(w) >= -1e-10 * w.trace().abs());
        }
    }

    #[test]
    fn transfer_scaling_exact(c in -5.0f64..5.0, w in 0.01f64..100.0, e in 0.1f64..1.9) {
        let tf = TransferFunction::rational(vec![(1.0, 0.0), (0.3, e)], vec![(1.0, e), (2.0, 0.0)]).unwrap();
        let s = Complex64::new(0.0, w);
        let lhs = tf_eval(&tf.scaled(c), s).unwrap().scalar();
        let rhs = tf_eval(&tf, s).unwrap().scalar() * c;
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn bisection_within_cap(seed in any::<u64>(), alpha in 0.2f64..0.95, eps in 1e-4f64..0.5) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, 2, 1, 0.2);
        let model = FosModel::new(vec![alpha, 0.5], model.a().clone(), model.b().clone(), model.bw().clone()).unwrap();
        let t = simulate_fos(&model, &DVector::from_element(2, 1.0), &[], &Noise::Gaussian { seed, sigma: 0.1 }, 60).unwrap();
        let res = identify(&t, 60, eps, Window::new(0, 60)).unwrap();
        let cap = (2.0 / eps).log2().ceil() as u32;
        for ch in &res.channels {
            prop_assert!(ch.iterations <= cap);
        }
        let aug = augment_p(&res.model().unwrap(), 5).unwrap();
        let whole = op_norm(&aug.a);
        for j in 0..5 {
            prop_assert!(op_norm(&aug.a.view((0, 2 * j), (2, 2)).into_owned()) <= whole + 1e-12);
        }
    }

    #[test]
    fn filter_update_forms_agree(seed in any::<u64>(), n in 1usize..4, v in 1usize..4) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, 1, 0.3);
        let q = r.random_range(1..=n);
        let net = MultiTermNetwork::from_fos(&model, rand_matrix(&mut r, q, n, 1.0)).unwrap();
        let aug = augment_v(&net, v).unwrap();
        let rw = DMatrix::identity(q, q) * 0.3;
        let cfg = EstimatorConfig::constant(DMatrix::identity(n, n) * 0.5, rw.clone(), DMatrix::identity(aug.dim(), aug.dim()), DVector::zeros(aug.dim()));
        let mut f = MinEnergyFilter::new(aug.clone(), cfg).unwrap();
        for k in 0..5 {
            let u = rand_vector(&mut r, 1, 1.0);
            let y = rand_vector(&mut r, q, 1.0);
            let s = f.step(&u, &y).unwrap().clone();
            let (gain, m) = (s.gain.unwrap(), s.m.unwrap());
            let c = aug.output_at(k + 1);
            let ikc = DMatrix::identity(aug.dim(), aug.dim()) - &gain * &c;
            let joseph = &ikc * &m * ikc.transpose() + &gain * &rw * gain.transpose();
            prop_assert!((&joseph - &s.p).amax() <= 1e-9 * s.p.amax().max(1e-300));
            // the gain minimizes the trace of the Joseph-form covariance
            let cost = |k: &DMatrix<f64>| {
                let ikc = DMatrix::identity(aug.dim(), aug.dim()) - k * &c;
                (&ikc * &m * ikc.transpose() + k * &rw * k.transpose()).trace()
            };
            let best = cost(&gain);
            for i in 0..gain.nrows() {
                for j in 0..gain.ncols() {
                    for d in [-1e-3, 1e-3] {
                        let mut kp = gain.clone();
                        kp[(i, j)] += d;
                        prop_assert!(cost(&kp) >= best - 1e-12 * best.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn mpc_dominates_zero_and_meets_kkt(seed in any::<u64>(), n in 1usize..4, horizon in 1usize..8, bound in 0.05f64..3.0) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, n, 1, 0.3);
        let depth = r.random_range(1..=6);
        let problem = MpcProblem::new(n, 1, depth, horizon, horizon).with_bounds(-bound, bound);
        let ctrl = MpcController::new(problem.clone(), &model).unwrap();
        let hist: Vec<_> = (0..r.random_range(1..8)).map(|_| rand_vector(&mut r, n, 1.0)).collect();
        let sol = ctrl.solve(&hist).unwrap();
        let xt = lifted_history(&hist, n, depth).unwrap();
        prop_assert!(sol.cost <= ctrl.cost_of(&xt, &DVector::zeros(horizon)) + 1e-12);
        prop_assert!(sol.inputs.iter().all(|u| u[0] >= -bound && u[0] <= bound));
        let cond = condense(ctrl.lift(), horizon);
        let g0 = (cond.gamma.transpose() * (&cond.f * &xt)) * 2.0;
        prop_assert!(sol.kkt_residual <= 1e-8 * (1.0 + g0.norm()));
    }

    #[test]
    fn receding_horizon_bookkeeping(seed in any::<u64>(), steps in 1usize..40, m in 1usize..6, extra in 0usize..4) {
        let mut r = rng(seed);
        let model = rand_model(&mut r, 2, 1, 0.3);
        let problem = MpcProblem::new(2, 1, 4, m + extra, m).with_bounds(-1.0, 1.0);
        let run = run_closed_loop(&model, &problem, &DVector::from_element(2, 1.0), steps, &Noise::Gaussian { seed, sigma: 0.1 }).unwrap();
        prop_assert_eq!(run.solves.len(), steps.div_ceil(m));
        for k in 0..steps {
            prop_assert_eq!(&run.trajectory.inputs[k], &run.solutions[k / m].inputs[k % m]);
        }
    }
}
