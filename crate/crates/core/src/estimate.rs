//! Minimum-energy state estimation on finite-memory lifts: the recursive
//! filter, a dense batch solver of the same least-squares problem, and the
//! end-to-end estimation run on a network.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::{check_spd, from_rows, inverse_spd, symmetrize};
use crate::model::{augment_v, AugmentedModel, MultiTermNetwork};
use crate::simulate::Trajectory;

/// Weight matrix that is either constant or given per step; steps past the
/// end of a schedule reuse its last entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Constant(DMatrix<f64>),
    Schedule(Vec<DMatrix<f64>>),
}

impl Weight {
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        match self {
            Weight::Constant(w) => w,
            Weight::Schedule(ws) => &ws[k.min(ws.len() - 1)],
        }
    }

    fn check(&self, dim: usize, name: &str) -> Result<()> {
        let all: Vec<&DMatrix<f64>> = match self {
            Weight::Constant(w) => vec![w],
            Weight::Schedule(ws) if ws.is_empty() => {
                return Err(Error::invalid(name, "empty schedule"));
            }
            Weight::Schedule(ws) => ws.iter().collect(),
        };
        for w in all {
            if w.nrows() != dim || w.ncols() != dim {
                return Err(Error::Dimension(format!("{name} is {}x{}, expected {dim}x{dim}", w.nrows(), w.ncols())));
            }
            check_spd(w, name)?;
        }
        Ok(())
    }
}

/// Weights of the estimation objective
///
/// ```text
/// sum_i r_i^T Q_i^{-1} r_i + sum_j v_j^T R_j^{-1} v_j + (x0 - xhat0)^T P0^{-1} (x0 - xhat0)
/// ```
///
/// `Q` is indexed by the step `i = 0..N-1`, `R` by the measurement time `j = 1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub q: Weight,
    pub r: Weight,
    pub p0: DMatrix<f64>,
    pub xhat0: DVector<f64>,
}

impl EstimatorConfig {
    pub fn constant(q: DMatrix<f64>, r: DMatrix<f64>, p0: DMatrix<f64>, xhat0: DVector<f64>) -> Self {
        EstimatorConfig {
            q: Weight::Constant(q),
            r: Weight::Constant(r),
            p0,
            xhat0,
        }
    }

    /// Scaled identities sized for `aug`, with a zero prior mean.
    pub fn isotropic(aug: &AugmentedModel, q: f64, r: f64, p0: f64) -> Self {
        let (g, m, d) = (aug.g.ncols(), aug.q, aug.dim());
        Self::constant(
            DMatrix::identity(g, g) * q,
            DMatrix::identity(m, m) * r,
            DMatrix::identity(d, d) * p0,
            DVector::zeros(d),
        )
    }

    pub fn validate(&self, aug: &AugmentedModel) -> Result<()> {
        let d = aug.dim();
        if self.xhat0.len() != d {
            return Err(Error::Dimension(format!("xhat0 has length {}, expected {d}", self.xhat0.len())));
        }
        if self.p0.nrows() != d || self.p0.ncols() != d {
            return Err(Error::Dimension(format!("P0 is {}x{}, expected {d}x{d}", self.p0.nrows(), self.p0.ncols())));
        }
        check_spd(&self.p0, "P0")?;
        self.q.check(aug.g.ncols(), "Q")?;
        self.r.check(aug.q, "R")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub k: usize,
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub gain: Option<DMatrix<f64>>,
    pub m: Option<DMatrix<f64>>,
}

/// Recursive minimum-energy filter
///
/// ```text
/// M_{k+1} = Ã P_k Ã^T + G̃ Q_k G̃^T
/// K_{k+1} = M C^T (C M C^T + R)^{-1}
/// x̂[k+1] = Ã x̂[k] + B̃ u[k] + K (y[k+1] - C (Ã x̂[k] + B̃ u[k]))
/// P_{k+1} = (I - K C) M
/// ```
///
/// The output at time 0 is never used.
#[derive(Debug, Clone)]
pub struct MinEnergyFilter {
    aug: AugmentedModel,
    config: EstimatorConfig,
    state: EstimatorState,
}

impl MinEnergyFilter {
    pub fn new(aug: AugmentedModel, config: EstimatorConfig) -> Result<Self> {
        config.validate(&aug)?;
        let state = EstimatorState {
            k: 0,
            xhat: config.xhat0.clone(),
            p: config.p0.clone(),
            gain: None,
            m: None,
        };
        Ok(MinEnergyFilter { aug, config, state })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn model(&self) -> &AugmentedModel {
        &self.aug
    }

    /// Base-state block of the current estimate.
    pub fn estimate(&self) -> DVector<f64> {
        self.aug.base_state(&self.state.xhat)
    }

    pub fn step(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<&EstimatorState> {
        let aug = &self.aug;
        if u.len() != aug.m {
            return Err(Error::Dimension(format!("input of length {}, expected {}", u.len(), aug.m)));
        }
        if y.len() != aug.q {
            return Err(Error::Dimension(format!("measurement of length {}, expected {}", y.len(), aug.q)));
        }
        let k = self.state.k;
        let mut pred = &aug.a * &self.state.xhat;
        if aug.m > 0 {
            pred += &aug.b * u;
        }
        let m = symmetrize(&(&aug.a * &self.state.p * aug.a.transpose() + &aug.g * self.config.q.at(k) * aug.g.transpose()));
        let c = aug.output_at(k + 1);
        let s = &c * &m * c.transpose() + self.config.r.at(k + 1);
        let chol = symmetrize(&s).cholesky().ok_or(Error::InnovationSingular)?;
        let cm = &c * &m;
        let gain = chol.solve(&cm).transpose();
        let innovation = y - &c * &pred;
        let xhat = pred + &gain * innovation;
        let d = aug.dim();
        let p = symmetrize(&((DMatrix::identity(d, d) - &gain * &c) * &m));
        if xhat.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        self.state = EstimatorState {
            k: k + 1,
            xhat,
            p,
            gain: Some(gain),
            m: Some(m),
        };
        Ok(&self.state)
    }
}

/// Minimizer of the estimation objective over `x~[0]` and `r[0..N-1]`.
#[derive(Debug, Clone)]
pub struct BatchSolution {
    /// Lifted states `x~[0..=N]` along the minimizer.
    pub xhat: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Solves the estimation problem with dense normal equations, given
/// `u[0..N-1]` and `y[1..N]` (`y[j-1]` holds the output at time `j`).
pub fn me_batch(aug: &AugmentedModel, config: &EstimatorConfig, u: &[DVector<f64>], y: &[DVector<f64>]) -> Result<BatchSolution> {
    config.validate(aug)?;
    let steps = y.len();
    if steps == 0 {
        return Err(Error::invalid("N", "at least one measurement is required"));
    }
    if aug.m > 0 && u.len() < steps {
        return Err(Error::Dimension(format!("{} inputs for {steps} steps", u.len())));
    }
    let d = aug.dim();
    let g = aug.g.ncols();
    let nz = d + steps * g;
    // x~[k] = T_k z + c_k
    let mut t = DMatrix::zeros(d, nz);
    t.view_mut((0, 0), (d, d)).fill_with_identity();
    let mut c = DVector::zeros(d);
    let mut maps = Vec::with_capacity(steps + 1);
    maps.push((t.clone(), c.clone()));
    for k in 0..steps {
        t = &aug.a * &t;
        t.view_mut((0, d + k * g), (d, g)).copy_from(&aug.g);
        c = &aug.a * &c;
        if aug.m > 0 {
            if u[k].len() != aug.m {
                return Err(Error::Dimension(format!("input of length {}, expected {}", u[k].len(), aug.m)));
            }
            c += &aug.b * &u[k];
        }
        maps.push((t.clone(), c.clone()));
    }
    let mut h = DMatrix::zeros(nz, nz);
    let mut f = DVector::zeros(nz);
    let p0_inv = inverse_spd(&config.p0, "P0")?;
    h.view_mut((0, 0), (d, d)).copy_from(&p0_inv);
    f.rows_mut(0, d).copy_from(&(&p0_inv * &config.xhat0));
    let mut q_inv = Vec::with_capacity(steps);
    for i in 0..steps {
        let qi = inverse_spd(config.q.at(i), "Q")?;
        h.view_mut((d + i * g, d + i * g), (g, g)).copy_from(&qi);
        q_inv.push(qi);
    }
    let mut r_inv = Vec::with_capacity(steps);
    for j in 1..=steps {
        let yj = &y[j - 1];
        if yj.len() != aug.q {
            return Err(Error::Dimension(format!("measurement of length {}, expected {}", yj.len(), aug.q)));
        }
        let rj = inverse_spd(config.r.at(j), "R")?;
        let cj = aug.output_at(j);
        let (tj, offs) = &maps[j];
        let ct = &cj * tj;
        let wct = &rj * &ct;
        h += ct.transpose() * &wct;
        f += wct.transpose() * (yj - &cj * offs);
        r_inv.push(rj);
    }
    let chol = symmetrize(&h)
        .cholesky()
        .ok_or_else(|| Error::Singular("batch normal equations".into()))?;
    let z = chol.solve(&f);
    let xhat: Vec<DVector<f64>> = maps.iter().map(|(tk, ck)| tk * &z + ck).collect();
    let residuals: Vec<DVector<f64>> = (0..steps).map(|i| z.rows(d + i * g, g).into_owned()).collect();
    let dx = &xhat[0] - &config.xhat0;
    let mut cost = dx.dot(&(&p0_inv * &dx));
    for (i, r) in residuals.iter().enumerate() {
        cost += r.dot(&(&q_inv[i] * r));
    }
    for j in 1..=steps {
        let v = &y[j - 1] - aug.output_at(j) * &xhat[j];
        cost += v.dot(&(&r_inv[j - 1] * &v));
    }
    Ok(BatchSolution { xhat, residuals, cost })
}

/// Output of [`run_estimator`].
#[derive(Debug, Clone)]
pub struct EstimationRun {
    /// Base-state estimates `x̂[0..=K]`.
    pub estimates: Vec<DVector<f64>>,
    /// `‖x̂[k] - x[k]‖` when the trajectory carries true states.
    pub error_norms: Option<Vec<f64>>,
}

impl EstimationRun {
    pub fn terminal_error(&self) -> Option<f64> {
        self.error_norms.as_ref().and_then(|e| e.last().copied())
    }

    pub fn sup_error(&self) -> Option<f64> {
        self.error_norms.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max))
    }

    /// Mean error over the last `len` samples.
    pub fn tail_mean_error(&self, len: usize) -> Option<f64> {
        self.error_norms.as_ref().map(|e| {
            let tail = &e[e.len().saturating_sub(len)..];
            tail.iter().sum::<f64>() / tail.len().max(1) as f64
        })
    }

    /// CSV `t,xhat1..,err_norm` (the error column is empty without ground truth).
    pub fn to_csv(&self, dt: f64) -> String {
        let n = self.estimates.first().map_or(0, |x| x.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",xhat{i}"));
        }
        out.push_str(",err_norm\n");
        for (k, x) in self.estimates.iter().enumerate() {
            out.push_str(&format!("{:?}", k as f64 * dt));
            for v in x.iter() {
                out.push_str(&format!(",{v:?}"));
            }
            match self.error_norms.as_ref().and_then(|e| e.get(k)) {
                Some(e) => out.push_str(&format!(",{e:?}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Runs the filter over the outputs of `traj` on the `v`-approximation of `net`.
pub fn run_estimator(net: &MultiTermNetwork, v: usize, config: &EstimatorConfig, traj: &Trajectory) -> Result<EstimationRun> {
    let aug = augment_v(net, v)?;
    run_on_lift(aug, config, traj)
}

/// Runs the filter of an already built lift over the outputs of `traj`.
pub fn run_on_lift(aug: AugmentedModel, config: &EstimatorConfig, traj: &Trajectory) -> Result<EstimationRun> {
    let outputs = traj
        .outputs
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory", "no output columns to estimate from"))?;
    let steps = outputs.len().saturating_sub(1);
    let m = aug.m;
    let mut filter = MinEnergyFilter::new(aug, config.clone())?;
    let mut estimates = Vec::with_capacity(steps + 1);
    estimates.push(filter.estimate());
    for k in 0..steps {
        let u = traj.inputs.get(k).cloned().unwrap_or_else(|| DVector::zeros(m));
        filter.step(&u, &outputs[k + 1])?;
        estimates.push(filter.estimate());
    }
    let error_norms = (traj.states.len() == estimates.len()).then(|| {
        estimates
            .iter()
            .zip(&traj.states)
            .map(|(e, x)| (e - x).norm())
            .collect()
    });
    Ok(EstimationRun { estimates, error_norms })
}

/// Weight entry of a config file: a scalar (times identity), a matrix, or a
/// per-step list of matrices.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Schedule(Vec<Vec<Vec<f64>>>),
}

impl WeightSpec {
    fn matrix(rows: &[Vec<f64>], dim: usize, name: &str) -> Result<DMatrix<f64>> {
        let m = from_rows(rows, rows.first().map_or(0, |r| r.len()), name)?;
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::Dimension(format!("{name} is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }

    fn weight(&self, dim: usize, name: &str) -> Result<Weight> {
        Ok(match self {
            WeightSpec::Scalar(s) => Weight::Constant(DMatrix::identity(dim, dim) * *s),
            WeightSpec::Matrix(rows) => Weight::Constant(Self::matrix(rows, dim, name)?),
            WeightSpec::Schedule(list) => Weight::Schedule(
                list.iter()
                    .map(|rows| Self::matrix(rows, dim, name))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

/// Estimator config file: `{"Q": .., "R": .., "P0": .., "xhat0": [..]}`.
/// `xhat0` may be omitted (zero) or given on the base state only.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfigFile {
    #[serde(rename = "Q")]
    pub q: WeightSpec,
    #[serde(rename = "R")]
    pub r: WeightSpec,
    #[serde(rename = "P0")]
    pub p0: WeightSpec,
    #[serde(default)]
    pub xhat0: Option<Vec<f64>>,
}

impl EstimatorConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn resolve(&self, aug: &AugmentedModel) -> Result<EstimatorConfig> {
        let d = aug.dim();
        let p0 = match self.p0.weight(d, "P0")? {
            Weight::Constant(p) => p,
            Weight::Schedule(_) => return Err(Error::invalid("P0", "must be a single matrix")),
        };
        let xhat0 = match &self.xhat0 {
            None => DVector::zeros(d),
            Some(v) if v.len() == d => DVector::from_column_slice(v),
            Some(v) if v.len() == aug.n => aug.lift_state(&DVector::from_column_slice(v)),
            Some(v) => {
                return Err(Error::Dimension(format!("xhat0 has length {}, expected {} or {d}", v.len(), aug.n)));
            }
        };
        let config = EstimatorConfig {
            q: self.q.weight(aug.g.ncols(), "Q")?,
            r: self.r.weight(aug.q, "R")?,
            p0,
            xhat0,
        };
        config.validate(aug)?;
        Ok(config)
    }
}
