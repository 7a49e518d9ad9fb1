//! Stability tests, finite-horizon Gramians and fractional frequency responses.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, symmetrize, RankInfo, RANK_RTOL};
use crate::model::{augment_p, FosModel};
use crate::simulate::transition_matrices;

/// Angular tolerance (radians) under which an eigenvalue counts as on the
/// stability boundary.
pub const MARGIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    #[serde(serialize_with = "ser_complex_list")]
    pub eigenvalues: Vec<Complex64>,
    /// `|arg(lambda_i)| - alpha * pi / 2`
    pub margins: Vec<f64>,
    pub verdict: Verdict,
}

fn ser_complex_list<S: serde::Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Sector test for `D^alpha x = A x`: stable when every eigenvalue satisfies
/// `|arg(lambda)| > alpha * pi / 2`.
pub fn commensurate_stability(a: &DMatrix<f64>, alpha: f64) -> Result<StabilityReport> {
    commensurate_stability_tol(a, alpha, MARGIN_TOL)
}

pub fn commensurate_stability_tol(a: &DMatrix<f64>, alpha: f64, tol: f64) -> Result<StabilityReport> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::invalid("alpha", format!("{alpha} outside (0, 2)")));
    }
    let eigenvalues = eigenvalues(a)?;
    let margins: Vec<f64> = eigenvalues
        .iter()
        .map(|l| l.im.atan2(l.re).abs() - alpha * FRAC_PI_2)
        .collect();
    let verdict = if margins.iter().any(|m| m.abs() <= tol) {
        Verdict::Marginal
    } else if margins.iter().all(|&m| m > tol) {
        Verdict::Stable
    } else {
        Verdict::Unstable
    };
    Ok(StabilityReport {
        eigenvalues,
        margins,
        verdict,
    })
}

/// Spectral radius of the `p`-augmented lift. There is no exact stability
/// test for non-commensurate orders; this number is only indicative.
#[derive(Debug, Clone, Serialize)]
pub struct LiftRadius {
    pub depth: usize,
    pub spectral_radius: f64,
    pub label: &'static str,
}

pub fn lift_spectral_radius(model: &FosModel, depth: usize) -> Result<LiftRadius> {
    let aug = augment_p(model, depth)?;
    let rho = eigenvalues(&aug.a)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(LiftRadius {
        depth,
        spectral_radius: rho,
        label: "heuristic",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GramianKind {
    Controllability,
    Observability,
}

#[derive(Debug, Clone, Serialize)]
pub struct GramianReport {
    pub kind: GramianKind,
    pub horizon: usize,
    #[serde(serialize_with = "ser_matrix")]
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub smallest_retained: f64,
    pub singular_values: Vec<f64>,
}

impl GramianReport {
    pub fn full_rank(&self) -> bool {
        self.rank == self.matrix.nrows()
    }
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::linalg::to_rows(m).serialize(s)
}

fn rank_of(m: &DMatrix<f64>, horizon: usize) -> RankInfo {
    numerical_rank(m, m.nrows().max(horizon), RANK_RTOL)
}

fn check_horizon(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K", "horizon must be at least 1"));
    }
    Ok(())
}

fn check_b(model: &FosModel, b: &DMatrix<f64>) -> Result<()> {
    if b.nrows() != model.n() {
        return Err(Error::Dimension(format!("B has {} rows, expected {}", b.nrows(), model.n())));
    }
    Ok(())
}

fn inverse_transition(g: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let info = rank_of(g, horizon);
    if info.rank < n {
        return Err(Error::Singular(format!("G_{horizon} has numerical rank {} < {n}", info.rank)));
    }
    g.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("G_{horizon}")))
}

/// `[G_0 B, ..., G_{K-1} B]`
fn reach_matrix(g: &[DMatrix<f64>], b: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n = b.nrows();
    let m = b.ncols();
    let mut r = DMatrix::zeros(n, m * horizon);
    for j in 0..horizon {
        r.columns_mut(j * m, m).copy_from(&(&g[j] * b));
    }
    r
}

/// `W_c(0,K) = G_K^{-1} (sum_{j<K} G_j B B^T G_j^T) G_K^{-T}`.
pub fn controllability_gramian(model: &FosModel, b: &DMatrix<f64>, horizon: usize) -> Result<GramianReport> {
    check_horizon(horizon)?;
    check_b(model, b)?;
    let g = transition_matrices(model, horizon);
    let gk_inv = inverse_transition(&g[horizon], horizon)?;
    let r = reach_matrix(&g, b, horizon);
    let w = symmetrize(&(&gk_inv * &r * r.transpose() * gk_inv.transpose()));
    let info = rank_of(&w, horizon);
    Ok(GramianReport {
        kind: GramianKind::Controllability,
        horizon,
        matrix: w,
        rank: info.rank,
        smallest_retained: info.smallest_retained,
        singular_values: info.singular_values,
    })
}

/// Minimum-energy input sequence `u[0..K]` driving `x[0]` to the origin at
/// step `K`. Computed as the minimum-norm solution of
/// `sum_j G_{K-1-j} B u[j] = -G_K x[0]`, which is algebraically the same as
/// `-[G_0 B ... G_{K-1} B]^T G_K^{-T} W_c^{-1} x[0]` but avoids squaring the
/// conditioning.
pub fn deadbeat_input(model: &FosModel, b: &DMatrix<f64>, x0: &DVector<f64>, horizon: usize) -> Result<Vec<DVector<f64>>> {
    check_horizon(horizon)?;
    check_b(model, b)?;
    if x0.len() != model.n() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), model.n())));
    }
    let report = controllability_gramian(model, b, horizon)?;
    let n = model.n();
    if report.rank < n {
        return Err(Error::NotControllable {
            horizon,
            rank: report.rank,
            n,
        });
    }
    let m = b.ncols();
    let g = transition_matrices(model, horizon);
    let r = reach_matrix(&g, b, horizon);
    let target = -(&g[horizon] * x0);
    let stacked = lstsq(&r, &target)?;
    // block i of the stack pairs with G_i B, i.e. with u[K-1-i]
    Ok((0..horizon)
        .map(|j| stacked.rows((horizon - 1 - j) * m, m).into_owned())
        .collect())
}

fn lstsq(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = a.nrows().max(a.ncols()) as f64 * smax * RANK_RTOL;
    svd.solve(rhs, eps).map_err(|e| Error::Singular(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct ObservabilityMatrices {
    /// `[C G_0; ...; C G_{K-1}]`
    pub obs: DMatrix<f64>,
    /// `sum_{j<K} G_j^T C^T C G_j`
    pub gramian: DMatrix<f64>,
    /// Block lower-triangular input map with block `(i, j) = C G_{i-1-j} B` for `i > j`.
    pub toeplitz: DMatrix<f64>,
    pub rank: usize,
    pub smallest_retained: f64,
    pub singular_values: Vec<f64>,
}

impl ObservabilityMatrices {
    pub fn observable(&self) -> bool {
        self.rank == self.obs.ncols()
    }

    pub fn report(&self, horizon: usize) -> GramianReport {
        GramianReport {
            kind: GramianKind::Observability,
            horizon,
            matrix: self.gramian.clone(),
            rank: self.rank,
            smallest_retained: self.smallest_retained,
            singular_values: self.singular_values.clone(),
        }
    }
}

pub fn observability_matrices(
    model: &FosModel,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    horizon: usize,
) -> Result<ObservabilityMatrices> {
    check_horizon(horizon)?;
    check_b(model, b)?;
    let n = model.n();
    if c.ncols() != n {
        return Err(Error::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
    }
    let q = c.nrows();
    let m = b.ncols();
    let g = transition_matrices(model, horizon);
    let mut obs = DMatrix::zeros(q * horizon, n);
    for i in 0..horizon {
        obs.rows_mut(i * q, q).copy_from(&(c * &g[i]));
    }
    let cgb: Vec<DMatrix<f64>> = (0..horizon).map(|i| c * &g[i] * b).collect();
    let mut toeplitz = DMatrix::zeros(q * horizon, m * horizon);
    for i in 1..horizon {
        for j in 0..i {
            toeplitz.view_mut((i * q, j * m), (q, m)).copy_from(&cgb[i - 1 - j]);
        }
    }
    let gramian = symmetrize(&(obs.transpose() * &obs));
    let info = numerical_rank(&obs, n.max(horizon), RANK_RTOL);
    Ok(ObservabilityMatrices {
        obs,
        gramian,
        toeplitz,
        rank: info.rank,
        smallest_retained: info.smallest_retained,
        singular_values: info.singular_values,
    })
}

/// Recovers `x[0]` from `y[0..K]` and `u[0..K]` (only `u[0..K-1]` enters),
/// solving `O_K x0 = Y - M_K U` in the least-squares sense; this is the normal
/// equation `W_o x0 = O_K^T (Y - M_K U)` without forming `W_o^{-1}`.
pub fn reconstruct_initial_state(
    model: &FosModel,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    u: &[DVector<f64>],
    y: &[DVector<f64>],
    horizon: usize,
) -> Result<DVector<f64>> {
    let mats = observability_matrices(model, b, c, horizon)?;
    if !mats.observable() {
        return Err(Error::NotObservable {
            horizon,
            rank: mats.rank,
            n: model.n(),
        });
    }
    let (q, m) = (c.nrows(), b.ncols());
    if y.len() < horizon {
        return Err(Error::Dimension(format!("{} outputs for horizon {horizon}", y.len())));
    }
    let mut ystack = DVector::zeros(q * horizon);
    for i in 0..horizon {
        if y[i].len() != q {
            return Err(Error::Dimension(format!("output of length {}, expected {q}", y[i].len())));
        }
        ystack.rows_mut(i * q, q).copy_from(&y[i]);
    }
    let mut ustack = DVector::zeros(m * horizon);
    for (i, ui) in u.iter().take(horizon).enumerate() {
        if ui.len() != m {
            return Err(Error::Dimension(format!("input of length {}, expected {m}", ui.len())));
        }
        ustack.rows_mut(i * m, m).copy_from(ui);
    }
    let rhs = ystack - &mats.toeplitz * ustack;
    lstsq(&mats.obs, &rhs)
}

/// Fractional transfer function.
#[derive(Debug, Clone, PartialEq)]
pub enum TfForm {
    /// `sum_k b_k s^{beta_k} / sum_k a_k s^{alpha_k}`, terms given as `(coef, exponent)`.
    Rational { num: Vec<(f64, f64)>, den: Vec<(f64, f64)> },
    /// `C (s^alpha I - A)^{-1} B + D`
    StateSpace {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    form: TfForm,
    /// Scalar factors applied to the evaluated value, in order.
    gains: Vec<f64>,
}

impl TransferFunction {
    pub fn rational(num: Vec<(f64, f64)>, den: Vec<(f64, f64)>) -> Result<Self> {
        if den.is_empty() {
            return Err(Error::invalid("den", "denominator needs at least one term"));
        }
        if num.iter().chain(&den).any(|&(c, e)| !c.is_finite() || !e.is_finite() || e < 0.0) {
            return Err(Error::invalid("terms", "coefficients must be finite and exponents non-negative"));
        }
        Ok(TransferFunction {
            form: TfForm::Rational { num, den },
            gains: Vec::new(),
        })
    }

    pub fn state_space(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, alpha: f64) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension("inconsistent state-space matrices".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid("alpha", format!("{alpha} must be finite and non-negative")));
        }
        Ok(TransferFunction {
            form: TfForm::StateSpace { a, b, c, d, alpha },
            gains: Vec::new(),
        })
    }

    pub fn form(&self) -> &TfForm {
        &self.form
    }

    /// `c * H`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.gains.push(c);
        out
    }

    /// Output and input dimensions.
    pub fn shape(&self) -> (usize, usize) {
        match &self.form {
            TfForm::Rational { .. } => (1, 1),
            TfForm::StateSpace { d, .. } => (d.nrows(), d.ncols()),
        }
    }
}

/// Value of a transfer function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct TfValue {
    pub value: nalgebra::DMatrix<Complex64>,
    /// Set when `s` lies on the negative real axis and a non-integer power was
    /// taken on the principal branch.
    pub branch_cut: bool,
}

impl TfValue {
    pub fn scalar(&self) -> Complex64 {
        self.value[(0, 0)]
    }
}

/// `s^e` on the principal branch, with exact integer powers.
pub fn principal_pow(s: Complex64, e: f64) -> (Complex64, bool) {
    if e == 0.0 {
        return (Complex64::new(1.0, 0.0), false);
    }
    if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        return (s.powi(e as i32), false);
    }
    if s == Complex64::new(0.0, 0.0) {
        return (s, false);
    }
    // -0.0 imaginary parts would otherwise land on the lower side of the cut
    let s = Complex64::new(s.re, if s.im == 0.0 { 0.0 } else { s.im });
    let on_cut = s.im == 0.0 && s.re < 0.0;
    ((s.ln() * e).exp(), on_cut)
}

pub fn tf_eval(tf: &TransferFunction, s: Complex64) -> Result<TfValue> {
    let (mut value, branch_cut) = match &tf.form {
        TfForm::Rational { num, den } => {
            let mut cut = false;
            let mut sum = |terms: &[(f64, f64)]| {
                terms.iter().fold(Complex64::new(0.0, 0.0), |acc, &(c, e)| {
                    let (p, flag) = principal_pow(s, e);
                    cut |= flag;
                    acc + p * c
                })
            };
            let n = sum(num);
            let d = sum(den);
            if d == Complex64::new(0.0, 0.0) {
                return Err(Error::Domain(format!("denominator vanishes at s = {s}")));
            }
            (DMatrix::from_element(1, 1, n / d), cut)
        }
        TfForm::StateSpace { a, b, c, d, alpha } => {
            let (sa, cut) = principal_pow(s, *alpha);
            let n = a.nrows();
            let lhs = DMatrix::from_fn(n, n, |i, j| {
                let v = Complex64::new(-a[(i, j)], 0.0);
                if i == j {
                    v + sa
                } else {
                    v
                }
            });
            let bc = b.map(|v| Complex64::new(v, 0.0));
            let x = lhs
                .lu()
                .solve(&bc)
                .ok_or_else(|| Error::Singular(format!("s^alpha I - A at s = {s}")))?;
            let cc = c.map(|v| Complex64::new(v, 0.0));
            let dc = d.map(|v| Complex64::new(v, 0.0));
            (cc * x + dc, cut)
        }
    };
    for &g in &tf.gains {
        value.apply(|z| *z *= g);
    }
    Ok(TfValue { value, branch_cut })
}

/// One frequency-response sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyPoint {
    pub omega: f64,
    pub re: f64,
    pub im: f64,
    pub mag_db: f64,
    pub phase_deg: f64,
}

impl FrequencyPoint {
    pub fn new(omega: f64, z: Complex64) -> Self {
        FrequencyPoint {
            omega,
            re: z.re,
            im: z.im,
            mag_db: 20.0 * z.norm().log10(),
            phase_deg: z.arg().to_degrees(),
        }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// `(j omega)^e` from its polar form `omega^e * exp(j e pi / 2)`.
fn jw_pow(omega: f64, e: f64) -> Complex64 {
    if e.fract() == 0.0 {
        return principal_pow(Complex64::new(0.0, omega), e).0;
    }
    Complex64::from_polar(omega.powf(e), e * FRAC_PI_2)
}

fn check_omegas(omegas: &[f64]) -> Result<()> {
    if let Some(w) = omegas.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!("frequency {w} is not positive")));
    }
    Ok(())
}

/// `C(j omega) = kp + ki / (j omega)^lambda + kd (j omega)^mu`.
pub fn fopid_response(kp: f64, ki: f64, kd: f64, lambda: f64, mu: f64, omegas: &[f64]) -> Result<Vec<FrequencyPoint>> {
    check_omegas(omegas)?;
    Ok(omegas
        .iter()
        .map(|&w| {
            let z = Complex64::new(kp, 0.0) + jw_pow(w, lambda).inv() * ki + jw_pow(w, mu) * kd;
            FrequencyPoint::new(w, z)
        })
        .collect())
}

/// Frequency response of a SISO transfer function along `s = j omega`.
pub fn frequency_response(tf: &TransferFunction, omegas: &[f64]) -> Result<Vec<FrequencyPoint>> {
    check_omegas(omegas)?;
    if tf.shape() != (1, 1) {
        return Err(Error::Dimension(format!("frequency response needs a SISO system, got {:?}", tf.shape())));
    }
    omegas
        .iter()
        .map(|&w| Ok(FrequencyPoint::new(w, tf_eval(tf, Complex64::new(0.0, w))?.scalar())))
        .collect()
}

/// `n` logarithmically spaced frequencies from `lo` to `hi` inclusive.
pub fn log_frequencies(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

/// CSV with header `omega,re,im,mag_db,phase_deg`.
pub fn write_bode_csv<W: Write>(points: &[FrequencyPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
