#![allow(dead_code)]

use fracdyn::model::{FosModel, MultiTermNetwork};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

pub fn rand_vector(r: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| r.random_range(-scale..scale))
}

/// Random model with orders in `(0.2, 1.8)` and `A` entries below `scale`.
pub fn rand_model(r: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> FosModel {
    let alpha = (0..n).map(|_| r.random_range(0.2..1.8)).collect();
    let a = rand_matrix(r, n, n, scale);
    let b = rand_matrix(r, n, m, 1.0);
    FosModel::with_identity_noise(alpha, a, b).unwrap()
}

pub fn scalar_input_model(a: f64, alpha: f64) -> FosModel {
    FosModel::new(
        vec![alpha],
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap()
}

/// Scalar plant of the closed-loop experiments.
pub fn scalar_mpc_plant() -> FosModel {
    FosModel::new(
        vec![1.4881],
        DMatrix::from_element(1, 1, -0.0054),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.1),
    )
    .unwrap()
}

pub fn seizure_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.2969, -0.0203, -0.2922, 0.0587, 0.2574, -0.1726, -0.1905, 0.1535, 0.5348, -0.1066, -0.3471, -0.0169,
            0.4007, -0.6752, 0.0044, 0.3186,
        ],
    )
}

pub const SEIZURE_ALPHA: [f64; 4] = [0.8114, 0.8334, 0.8034, 0.8413];

/// Four-channel plant with a single common input.
pub fn seizure_plant() -> FosModel {
    FosModel::new(
        SEIZURE_ALPHA.to_vec(),
        seizure_a(),
        DMatrix::from_element(4, 1, 1.0),
        DMatrix::identity(4, 4) * 0.05,
    )
    .unwrap()
}

/// The four-channel plant without inputs, measured in full.
pub fn seizure_network() -> MultiTermNetwork {
    let m = FosModel::new(
        SEIZURE_ALPHA.to_vec(),
        seizure_a(),
        DMatrix::zeros(4, 0),
        DMatrix::identity(4, 4) * 0.05,
    )
    .unwrap();
    MultiTermNetwork::from_fos(&m, DMatrix::identity(4, 4)).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// `x[k+1] = (A + I) x[k] + B u[k] + Bw w[k]`.
pub fn lti_simulate(
    model: &FosModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    w: &[DVector<f64>],
    steps: usize,
) -> Vec<DVector<f64>> {
    let n = model.n();
    let f = model.a() + DMatrix::identity(n, n);
    let mut xs = vec![x0.clone()];
    for k in 0..steps {
        let mut next = &f * &xs[k];
        if model.m() > 0 {
            next += model.b() * &u[k];
        }
        next += model.bw() * &w[k];
        xs.push(next);
    }
    xs
}

pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}
