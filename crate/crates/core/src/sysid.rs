//! Identification of fractional orders (bisection on the one-step prediction
//! error) and of the spatial coupling matrix (ordinary least squares).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::eigenvalues;
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, symmetrize, RANK_RTOL};
use crate::model::FosModel;
use crate::simulate::Trajectory;

/// Range of transition indices `k` (pairs `x[k] -> x[k+1]`) used for fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub offset: usize,
    pub length: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window {
            offset: 0,
            length: 100,
        }
    }
}

impl Window {
    pub fn new(offset: usize, length: usize) -> Self {
        Window { offset, length }
    }

    /// Every transition of a `steps`-step trajectory.
    pub fn full(steps: usize) -> Self {
        Window {
            offset: 0,
            length: steps,
        }
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        let steps = traj.states.len().saturating_sub(1);
        if self.length == 0 || self.offset + self.length > steps {
            return Err(Error::invalid(
                "window",
                format!(
                    "offset {} + length {} exceeds the {steps} available transitions",
                    self.offset, self.length
                ),
            ));
        }
        Ok(())
    }
}

/// `⌈log2(2 / eps)⌉`, the number of halvings that shrink `[-1, 1]` to width `eps`.
pub fn bisection_bound(epsilon: f64) -> Result<u32> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon = {epsilon} must be positive")));
    }
    let mut nu = 0;
    let mut width = 2.0f64;
    while width > epsilon {
        width /= 2.0;
        nu += 1;
    }
    Ok(nu)
}

/// Least-squares solver for a fixed regressor matrix with many right-hand sides.
struct LeastSquares {
    phi: DMatrix<f64>,
    solver: Solver,
    ridge: bool,
}

enum Solver {
    Svd(nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64),
    Ridge(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl LeastSquares {
    fn new(phi: DMatrix<f64>) -> Result<Self> {
        let gram = phi.transpose() * &phi;
        let trace = gram.trace();
        if !(trace > 0.0) {
            return Err(Error::Singular("regressors are identically zero".into()));
        }
        let d = phi.ncols();
        let info = numerical_rank(&phi, phi.nrows().max(d), RANK_RTOL);
        if info.rank == d {
            let svd = phi.clone().svd(true, true);
            let smax = info.singular_values[0];
            let eps = phi.nrows().max(d) as f64 * smax * RANK_RTOL;
            Ok(LeastSquares {
                phi,
                solver: Solver::Svd(svd, eps),
                ridge: false,
            })
        } else {
            let reg = symmetrize(&gram) + DMatrix::identity(d, d) * (1e-10 * trace);
            let chol = reg
                .cholesky()
                .ok_or_else(|| Error::Singular("ridge-regularized Gram matrix".into()))?;
            Ok(LeastSquares {
                phi,
                solver: Solver::Ridge(chol),
                ridge: true,
            })
        }
    }

    fn solve(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.solver {
            Solver::Svd(svd, eps) => svd.solve(z, *eps).expect("svd has both factors"),
            Solver::Ridge(chol) => chol.solve(&(self.phi.transpose() * z)),
        }
    }
}

/// Per-channel data of one window: regressors `[x[k]; u[k]]` and the channel
/// samples needed to form `Δ^alpha x_i[k+1]`.
struct WindowData<'a> {
    traj: &'a Trajectory,
    window: Window,
    depth: usize,
    ls: LeastSquares,
}

impl<'a> WindowData<'a> {
    fn new(traj: &'a Trajectory, window: Window, depth: usize) -> Result<Self> {
        window.check(traj)?;
        if depth == 0 {
            return Err(Error::invalid("depth", "memory depth must be at least 1"));
        }
        let n = traj.n();
        let m = traj.m();
        let phi = DMatrix::from_fn(window.length, n + m, |r, c| {
            let k = window.offset + r;
            if c < n {
                traj.states[k][c]
            } else {
                traj.inputs[k][c - n]
            }
        });
        Ok(WindowData {
            traj,
            window,
            depth,
            ls: LeastSquares::new(phi)?,
        })
    }

    /// `z_i[k] = sum_{j=0}^{min(k+1, p)} psi(alpha, j) x_i[k+1-j]` over the window.
    fn target(&self, channel: usize, alpha: f64) -> DVector<f64> {
        let last = self.window.offset + self.window.length;
        let jmax = self.depth.min(last);
        let mut w = Vec::with_capacity(jmax + 1);
        let mut c = 1.0;
        w.push(c);
        for j in 1..=jmax {
            c *= (j as f64 - 1.0 - alpha) / j as f64;
            w.push(c);
        }
        let xs = &self.traj.states;
        DVector::from_fn(self.window.length, |r, _| {
            let k = self.window.offset + r;
            (0..=self.depth.min(k + 1)).map(|j| w[j] * xs[k + 1 - j][channel]).sum()
        })
    }

    /// Row estimate and one-step prediction residuals for one candidate order.
    fn fit(&self, channel: usize, alpha: f64) -> (DVector<f64>, DVector<f64>) {
        let z = self.target(channel, alpha);
        let coef = self.ls.solve(&z);
        let resid = z - &self.ls.phi * &coef;
        (coef, resid)
    }

    fn mse(&self, channel: usize, alpha: f64) -> f64 {
        let (_, r) = self.fit(channel, alpha);
        r.norm_squared() / r.len() as f64
    }

    fn channel_variance(&self, channel: usize) -> f64 {
        let vals: Vec<f64> = (0..self.window.length)
            .map(|r| self.traj.states[self.window.offset + r + 1][channel])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    }

    fn is_constant(&self, channel: usize) -> bool {
        let xs = &self.traj.states;
        let range = self.window.offset..=self.window.offset + self.window.length;
        let first = xs[self.window.offset][channel];
        let scale = first.abs().max(1.0);
        range.map(|k| xs[k][channel]).all(|v| (v - first).abs() <= 1e-14 * scale)
    }
}

/// Result of the least-squares spatial fit for fixed orders.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub a: DMatrix<f64>,
    /// Input matrix estimate when the trajectory has inputs.
    pub b: Option<DMatrix<f64>>,
    /// One row of residuals per channel.
    pub residuals: Vec<DVector<f64>>,
    pub mse: Vec<f64>,
    /// The regressors were rank deficient and a ridge term was added.
    pub ridge: bool,
}

/// Regresses `Δ^{alpha_i} x_i[k+1]` on `[x[k]; u[k]]` for every channel.
pub fn ols_spatial(traj: &Trajectory, alphas: &[f64], window: Window, depth: usize) -> Result<OlsFit> {
    let n = traj.n();
    if alphas.len() != n {
        return Err(Error::Dimension(format!("{} orders for {n} channels", alphas.len())));
    }
    let data = WindowData::new(traj, window, depth)?;
    let m = traj.m();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut residuals = Vec::with_capacity(n);
    let mut mse = Vec::with_capacity(n);
    for (i, &alpha) in alphas.iter().enumerate() {
        let (coef, r) = data.fit(i, alpha);
        a.row_mut(i).copy_from(&coef.rows(0, n).transpose());
        if m > 0 {
            b.row_mut(i).copy_from(&coef.rows(n, m).transpose());
        }
        mse.push(r.norm_squared() / r.len() as f64);
        residuals.push(r);
    }
    Ok(OlsFit {
        a,
        b: (m > 0).then_some(b),
        residuals,
        mse,
        ridge: data.ls.ridge,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChannelFlags {
    /// The channel is constant over the window; its order is set to 0.
    pub degenerate: bool,
    /// The midpoint error exceeded both endpoint errors at some iteration.
    pub non_unimodal: bool,
    /// Equal endpoint errors occurred; the lower half was kept.
    pub tie: bool,
    /// The error barely depends on the order and explains little of the signal.
    pub low_confidence: bool,
}

impl ChannelFlags {
    /// `;`-joined flag names, empty when none is set.
    pub fn label(&self) -> String {
        let mut out = Vec::new();
        if self.degenerate {
            out.push("degenerate");
        }
        if self.non_unimodal {
            out.push("non_unimodal");
        }
        if self.tie {
            out.push("tie");
        }
        if self.low_confidence {
            out.push("low_confidence");
        }
        out.join(";")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelReport {
    pub alpha_hat: f64,
    pub iterations: u32,
    pub mse: f64,
    /// Errors at the initial endpoints `-1` and `1`.
    pub endpoint_mse: [f64; 2],
    pub flags: ChannelFlags,
}

#[derive(Debug, Clone)]
pub struct IdentificationResult {
    pub alpha_hat: Vec<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: Option<DMatrix<f64>>,
    pub channels: Vec<ChannelReport>,
    pub window: Window,
    pub depth: usize,
    pub epsilon: f64,
    pub ridge: bool,
}

impl IdentificationResult {
    /// Identified model with unit noise gain; zero-column `B` when the data
    /// had no inputs.
    pub fn model(&self) -> Result<FosModel> {
        let n = self.alpha_hat.len();
        let b = self.b_hat.clone().unwrap_or_else(|| DMatrix::zeros(n, 0));
        FosModel::new(self.alpha_hat.clone(), self.a_hat.clone(), b, DMatrix::identity(n, n))
    }

    /// Diagnostics CSV `channel,alpha_hat,iterations,mse,flag`.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("channel,alpha_hat,iterations,mse,flag\n");
        for (i, c) in self.channels.iter().enumerate() {
            out.push_str(&format!(
                "{},{:?},{},{:?},{}\n",
                i + 1,
                c.alpha_hat,
                c.iterations,
                c.mse,
                c.flags.label()
            ));
        }
        out
    }
}

/// Bisection on `[-1, 1]` per channel: the half whose endpoint has the
/// larger one-step prediction error is discarded until the interval is no
/// wider than `epsilon`; the order estimate is the final midpoint. The
/// spatial matrix is then fitted by [`ols_spatial`] at the estimated orders.
pub fn identify(traj: &Trajectory, depth: usize, epsilon: f64, window: Window) -> Result<IdentificationResult> {
    let nu = bisection_bound(epsilon)?;
    if epsilon >= 2.0 {
        return Err(Error::Domain(format!("epsilon = {epsilon} must be below 2")));
    }
    let n = traj.n();
    if n == 0 {
        return Err(Error::invalid("trajectory", "no state columns"));
    }
    if window.length < 10 * (n + 1) {
        return Err(Error::invalid(
            "window",
            format!("length {} is below the minimum {}", window.length, 10 * (n + 1)),
        ));
    }
    let data = WindowData::new(traj, window, depth)?;
    let mut channels = Vec::with_capacity(n);
    for i in 0..n {
        channels.push(bisect_channel(&data, i, epsilon, nu));
    }
    let alpha_hat: Vec<f64> = channels.iter().map(|c| c.alpha_hat).collect();
    let fit = ols_spatial(traj, &alpha_hat, window, depth)?;
    Ok(IdentificationResult {
        alpha_hat,
        a_hat: fit.a,
        b_hat: fit.b,
        channels,
        window,
        depth,
        epsilon,
        ridge: fit.ridge,
    })
}

/// Endpoint errors closer than this fraction of the channel variance are
/// treated as equal; both then sit at round-off level.
const TIE_RTOL: f64 = 1e-24;

fn bisect_channel(data: &WindowData, channel: usize, epsilon: f64, bound: u32) -> ChannelReport {
    let mut flags = ChannelFlags::default();
    if data.is_constant(channel) {
        flags.degenerate = true;
        let mse = data.mse(channel, 0.0);
        return ChannelReport {
            alpha_hat: 0.0,
            iterations: 0,
            mse,
            endpoint_mse: [mse, mse],
            flags,
        };
    }
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut f_lo = data.mse(channel, lo);
    let mut f_hi = data.mse(channel, hi);
    let endpoint_mse = [f_lo, f_hi];
    let variance = data.channel_variance(channel);
    let tie_tol = TIE_RTOL * variance;
    let mut iterations = 0;
    while hi - lo > epsilon {
        let c = 0.5 * (lo + hi);
        let f_c = data.mse(channel, c);
        if f_c > f_lo && f_c > f_hi {
            flags.non_unimodal = true;
        }
        if f_hi < f_lo - tie_tol {
            lo = c;
            f_lo = f_c;
        } else {
            if (f_lo - f_hi).abs() <= tie_tol {
                flags.tie = true;
            }
            hi = c;
            f_hi = f_c;
        }
        iterations += 1;
    }
    assert!(iterations <= bound, "bisection exceeded its iteration bound");
    let alpha_hat = 0.5 * (lo + hi);
    let mse = data.mse(channel, alpha_hat);
    let best_endpoint = endpoint_mse[0].min(endpoint_mse[1]);
    let spread = (best_endpoint - mse).abs() / best_endpoint.max(f64::MIN_POSITIVE);
    flags.low_confidence = spread < 0.01 && mse >= 0.5 * variance;
    ChannelReport {
        alpha_hat,
        iterations,
        mse,
        endpoint_mse,
        flags,
    }
}

/// Mean squared one-step prediction error of `model` on `traj`, predicting
/// `x[k+1]` from the observed history with at most `depth` memory terms
/// (`None` keeps all of them).
pub fn one_step_mse(model: &FosModel, traj: &Trajectory, depth: Option<usize>) -> Result<f64> {
    let n = model.n();
    if traj.n() != n {
        return Err(Error::Dimension(format!("trajectory has {} channels, model {n}", traj.n())));
    }
    let steps = traj.states.len().saturating_sub(1);
    if steps == 0 {
        return Err(Error::invalid("trajectory", "needs at least two states"));
    }
    let use_input = model.m() > 0 && !traj.inputs.is_empty();
    if use_input && traj.m() != model.m() {
        return Err(Error::Dimension(format!("trajectory has {} inputs, model {}", traj.m(), model.m())));
    }
    let table = model.weight_table(steps);
    let xs = &traj.states;
    let mut total = 0.0;
    for k in 0..steps {
        let mut pred = model.a() * &xs[k];
        if use_input {
            pred += model.b() * &traj.inputs[k];
        }
        let jmax = depth.map_or(k + 1, |p| p.min(k + 1));
        for i in 0..n {
            let mut acc = 0.0;
            for j in 1..=jmax {
                acc += table.weight(i, j) * xs[k + 1 - j][i];
            }
            pred[i] -= acc;
        }
        total += (&xs[k + 1] - pred).norm_squared();
    }
    Ok(total / (steps * n) as f64)
}

/// `W_t = sum_{j=0}^{t-1} Ã^j (Ã^j)^T`.
pub fn finite_time_gramian(a: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension("matrix must be square".into()));
    }
    if t == 0 {
        return Err(Error::invalid("t", "must be at least 1"));
    }
    let d = a.nrows();
    let mut power = DMatrix::identity(d, d);
    let mut w = DMatrix::zeros(d, d);
    for _ in 0..t {
        w += &power * power.transpose();
        power = a * power;
    }
    Ok(symmetrize(&w))
}

/// Universal constants of the finite-sample bound, unknown in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_upper: f64,
    pub c_lower: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants {
            c_upper: 1.0,
            c_lower: 1.0,
        }
    }
}

/// Value of the high-probability OLS error bound, up to universal constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsBound {
    pub bound: f64,
    /// `K / k`
    pub ratio: f64,
    /// `c (d log(d / delta) + log det(W_K W_k^{-1}))`, which `ratio` should exceed.
    pub required_ratio: f64,
    pub side_condition_met: bool,
}

/// `C / sqrt(K lambda_min(W_k)) * sqrt(d log(d / delta) + log det(W_K W_k^{-1}))`.
pub fn ols_error_bound(
    a: &DMatrix<f64>,
    big_k: usize,
    small_k: usize,
    delta: f64,
    constants: BoundConstants,
) -> Result<OlsBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} outside (0, 1)")));
    }
    if big_k == 0 || small_k == 0 {
        return Err(Error::Domain("horizons must be positive".into()));
    }
    let rho = eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if rho > 1.0 + 1e-9 {
        return Err(Error::Domain(format!("spectral radius {rho} exceeds 1")));
    }
    let d = a.nrows();
    let wk = finite_time_gramian(a, small_k)?;
    let wbig = finite_time_gramian(a, big_k)?;
    let lmin = wk.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if !(lmin > 0.0) {
        return Err(Error::Domain("W_k is singular".into()));
    }
    let chol_k = wk.cholesky().ok_or_else(|| Error::Domain("W_k is singular".into()))?;
    let chol_big = wbig.cholesky().ok_or_else(|| Error::Domain("W_K is singular".into()))?;
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_ratio = logdet(&chol_big) - logdet(&chol_k);
    let df = d as f64;
    let complexity = df * (df / delta).ln() + log_det_ratio;
    let bound = constants.c_upper / (big_k as f64 * lmin).sqrt() * complexity.max(0.0).sqrt();
    let ratio = big_k as f64 / small_k as f64;
    let required_ratio = constants.c_lower * complexity;
    Ok(OlsBound {
        bound,
        ratio,
        required_ratio,
        side_condition_met: ratio >= required_ratio,
    })
}
