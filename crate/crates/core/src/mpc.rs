//! Certainty-equivalent model predictive control over the `p`-augmented
//! model with box input constraints, and closed-loop simulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{check_spd, from_rows, min_sym_eigenvalue, symmetrize};
use crate::model::{augment_p, AugmentedModel, FosModel};
use crate::qp::{BoxQp, Penalty};
use crate::simulate::{simulate_fos, FosSimulator, Noise, Trajectory};

/// Weight on soft state constraints.
pub const SOFT_PENALTY: f64 = 1e6;

/// Linear constraints `H x[k+j] <= b` on every predicted state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateConstraints {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Enforce exactly instead of through the quadratic penalty.
    pub hard: bool,
}

/// Finite-horizon problem
///
/// ```text
/// minimize  sum_{j=1}^{P} (x[k+j]ᵀ Q x[k+j] + cᵀ x[k+j]) + sum_{j=0}^{P-1} u[k+j]ᵀ R u[k+j]
/// ```
///
/// over `u[k..k+P-1]` within `[u_lo, u_hi]`, with states predicted by the
/// depth-`p` lift and zero noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub depth: usize,
    pub horizon: usize,
    pub control_horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub c: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    pub state_constraints: Option<StateConstraints>,
}

impl MpcProblem {
    /// Unit weights, no linear cost, no bounds.
    pub fn new(n: usize, m: usize, depth: usize, horizon: usize, control_horizon: usize) -> Self {
        MpcProblem {
            depth,
            horizon,
            control_horizon,
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
            c: DVector::zeros(n),
            u_lo: DVector::from_element(m, f64::NEG_INFINITY),
            u_hi: DVector::from_element(m, f64::INFINITY),
            state_constraints: None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        let m = self.u_lo.len();
        self.u_lo = DVector::from_element(m, lo);
        self.u_hi = DVector::from_element(m, hi);
        self
    }

    pub fn validate(&self, model: &FosModel) -> Result<()> {
        let (n, m) = (model.n(), model.m());
        if self.depth == 0 {
            return Err(Error::invalid("depth", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.control_horizon == 0 || self.control_horizon > self.horizon {
            return Err(Error::invalid(
                "control_horizon",
                format!("{} outside 1..={}", self.control_horizon, self.horizon),
            ));
        }
        if self.q.nrows() != n || self.q.ncols() != n || self.c.len() != n {
            return Err(Error::Dimension(format!("Q must be {n}x{n} and c of length {n}")));
        }
        if self.r.nrows() != m || self.r.ncols() != m || self.u_lo.len() != m || self.u_hi.len() != m {
            return Err(Error::Dimension(format!("R must be {m}x{m} and bounds of length {m}")));
        }
        if n > 0 && min_sym_eigenvalue(&self.q) < -1e-12 * self.q.amax().max(1.0) {
            return Err(Error::invalid("Q", "must be positive semidefinite"));
        }
        check_spd(&self.r, "R")?;
        for i in 0..m {
            if self.u_lo[i].is_nan() || self.u_hi[i].is_nan() || self.u_lo[i] > self.u_hi[i] {
                return Err(Error::invalid(
                    "u_lo",
                    format!("lower bound {} exceeds upper bound {} for input {}", self.u_lo[i], self.u_hi[i], i + 1),
                ));
            }
        }
        if let Some(sc) = &self.state_constraints {
            if sc.h.ncols() != n || sc.h.nrows() != sc.b.len() {
                return Err(Error::Dimension("state constraint H must be r x n with b of length r".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// `u*[k..k+P-1]`
    pub inputs: Vec<DVector<f64>>,
    /// `x̂[k+1..k+P]`
    pub predicted: Vec<DVector<f64>>,
    /// Quadratic cost at the optimum (constraint penalties excluded).
    pub cost: f64,
    /// Value of the soft-constraint penalty at the optimum.
    pub penalty: f64,
    pub kkt_residual: f64,
    /// Per stacked input component: `-1` at the lower bound, `1` at the upper, `0` free.
    pub active: Vec<i8>,
}

impl MpcSolution {
    pub fn any_active(&self) -> bool {
        self.active.iter().any(|&a| a != 0)
    }
}

/// Condensed prediction `X = F x~[k] + Γ U` of the stacked base states
/// `x[k+1..k+P]` as an affine function of the stacked inputs.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub f: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

pub fn condense(aug: &AugmentedModel, horizon: usize) -> Condensed {
    let (n, m, d) = (aug.n, aug.m, aug.dim());
    let mut f = DMatrix::zeros(horizon * n, d);
    let mut gamma = DMatrix::zeros(horizon * n, horizon * m);
    // powers[j] = Ã^j B̃, built by repeated structured products
    let mut apow = DMatrix::identity(d, d);
    let mut ab = aug.b.clone();
    let mut ab_pows = Vec::with_capacity(horizon);
    for j in 1..=horizon {
        apow = aug.apply(&apow);
        f.rows_mut((j - 1) * n, n).copy_from(&apow.rows(0, n));
        ab_pows.push(ab.rows(0, n).into_owned());
        ab = aug.apply(&ab);
    }
    for j in 1..=horizon {
        for i in 0..j {
            gamma
                .view_mut(((j - 1) * n, i * m), (n, m))
                .copy_from(&ab_pows[j - 1 - i]);
        }
    }
    Condensed { f, gamma }
}

/// Lifted state `[x[k], x[k-1], ..., x[k-p+1]]` from a history ending at
/// `x[k]`, zero before time 0.
pub fn lifted_history(history: &[DVector<f64>], n: usize, depth: usize) -> Result<DVector<f64>> {
    let last = history
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::invalid("history", "needs at least the current state"))?;
    let mut out = DVector::zeros(n * depth);
    for j in 0..depth.min(history.len()) {
        let x = &history[last - j];
        if x.len() != n {
            return Err(Error::Dimension(format!("history state of length {}, expected {n}", x.len())));
        }
        out.rows_mut(j * n, n).copy_from(x);
    }
    Ok(out)
}

/// Reusable controller: lift and condensed matrices are built once.
#[derive(Debug, Clone)]
pub struct MpcController {
    problem: MpcProblem,
    aug: AugmentedModel,
    cond: Condensed,
    hess: DMatrix<f64>,
    qbar: DMatrix<f64>,
    cbar: DVector<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    constraint_rows: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl MpcController {
    pub fn new(problem: MpcProblem, model: &FosModel) -> Result<Self> {
        problem.validate(model)?;
        let (n, m, p) = (model.n(), model.m(), problem.horizon);
        let aug = augment_p(model, problem.depth)?;
        let cond = condense(&aug, p);
        let mut qbar = DMatrix::zeros(p * n, p * n);
        let mut rbar = DMatrix::zeros(p * m, p * m);
        let mut cbar = DVector::zeros(p * n);
        for j in 0..p {
            qbar.view_mut((j * n, j * n), (n, n)).copy_from(&problem.q);
            rbar.view_mut((j * m, j * m), (m, m)).copy_from(&problem.r);
            cbar.rows_mut(j * n, n).copy_from(&problem.c);
        }
        let hess = symmetrize(&((cond.gamma.transpose() * &qbar * &cond.gamma + rbar) * 2.0));
        let lo = DVector::from_fn(p * m, |i, _| problem.u_lo[i % m.max(1)]);
        let hi = DVector::from_fn(p * m, |i, _| problem.u_hi[i % m.max(1)]);
        let constraint_rows = problem.state_constraints.as_ref().map(|sc| {
            let rows = sc.h.nrows();
            let mut hbar = DMatrix::zeros(p * rows, p * n);
            let mut bbar = DVector::zeros(p * rows);
            for j in 0..p {
                hbar.view_mut((j * rows, j * n), (rows, n)).copy_from(&sc.h);
                bbar.rows_mut(j * rows, rows).copy_from(&sc.b);
            }
            (hbar, bbar)
        });
        Ok(MpcController {
            problem,
            aug,
            cond,
            hess,
            qbar,
            cbar,
            lo,
            hi,
            constraint_rows,
        })
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    pub fn lift(&self) -> &AugmentedModel {
        &self.aug
    }

    pub fn condensed(&self) -> &Condensed {
        &self.cond
    }

    /// Quadratic cost of an input stack from lifted state `xt`.
    pub fn cost_of(&self, xt: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let x = &self.cond.f * xt + &self.cond.gamma * u;
        let m = self.aug.m;
        let mut ru = 0.0;
        for j in 0..self.problem.horizon {
            let uj = u.rows(j * m, m);
            ru += uj.dot(&(&self.problem.r * uj));
        }
        x.dot(&(&self.qbar * &x)) + self.cbar.dot(&x) + ru
    }

    /// Solves the horizon problem from the state history `x[0..=k]`.
    pub fn solve(&self, history: &[DVector<f64>]) -> Result<MpcSolution> {
        let (n, m, p) = (self.aug.n, self.aug.m, self.problem.horizon);
        let xt = lifted_history(history, n, self.problem.depth)?;
        let free = &self.cond.f * &xt;
        let grad0 = (self.cond.gamma.transpose() * (&self.qbar * &free)) * 2.0 + self.cond.gamma.transpose() * &self.cbar;
        let tol = 1e-10 * (1.0 + grad0.norm());
        let start = DVector::zeros(p * m);
        let (sol, penalty) = match &self.constraint_rows {
            None => {
                let qp = BoxQp {
                    h: &self.hess,
                    g: &grad0,
                    lo: &self.lo,
                    hi: &self.hi,
                    penalty: None,
                };
                (qp.solve(&start, tol)?, 0.0)
            }
            Some((hbar, bbar)) => {
                // H (F x~ + Γ U) <= b  <=>  (H Γ) U <= b - H F x~
                let a = hbar * &self.cond.gamma;
                let b = bbar - hbar * &free;
                let hard = self.problem.state_constraints.as_ref().is_some_and(|s| s.hard);
                if hard {
                    self.solve_hard(&grad0, &a, &b, &start, tol)?
                } else {
                    let pen = Penalty {
                        a: a.clone(),
                        beta: DVector::from_element(b.len(), 2.0 * SOFT_PENALTY),
                        b: b.clone(),
                    };
                    let qp = BoxQp {
                        h: &self.hess,
                        g: &grad0,
                        lo: &self.lo,
                        hi: &self.hi,
                        penalty: Some(&pen),
                    };
                    let s = qp.solve(&start, tol)?;
                    let viol = &a * &s.u - &b;
                    let pv = viol.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>() * SOFT_PENALTY;
                    (s, pv)
                }
            }
        };
        let u = sol.u;
        let x = &free + &self.cond.gamma * &u;
        let grad = &self.hess * &u + &grad0;
        let kkt = if penalty == 0.0 && self.constraint_rows.is_none() {
            BoxQp {
                h: &self.hess,
                g: &grad0,
                lo: &self.lo,
                hi: &self.hi,
                penalty: None,
            }
            .projected_gradient(&u, &grad)
            .norm()
        } else {
            sol.kkt_residual
        };
        Ok(MpcSolution {
            inputs: (0..p).map(|j| u.rows(j * m, m).into_owned()).collect(),
            predicted: (0..p).map(|j| x.rows(j * n, n).into_owned()).collect(),
            cost: self.cost_of(&xt, &u),
            penalty,
            kkt_residual: kkt,
            active: sol.active,
        })
    }

    /// Augmented-Lagrangian outer loop for exact state constraints.
    fn solve_hard(
        &self,
        grad0: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        start: &DVector<f64>,
        tol: f64,
    ) -> Result<(crate::qp::QpSolution, f64)> {
        let rows = b.len();
        let mut lambda = DVector::zeros(rows);
        let mut mu = 10.0;
        let mut u = start.clone();
        let feas_tol = 1e-8 * (1.0 + b.amax());
        let mut last_viol = f64::INFINITY;
        for _ in 0..60 {
            let shifted = b - &lambda / mu;
            let pen = Penalty {
                a: a.clone(),
                b: shifted,
                beta: DVector::from_element(rows, mu),
            };
            let qp = BoxQp {
                h: &self.hess,
                g: grad0,
                lo: &self.lo,
                hi: &self.hi,
                penalty: Some(&pen),
            };
            let s = qp.solve(&u, tol)?;
            u = s.u.clone();
            let r = a * &u - b;
            let viol = r.iter().copied().fold(0.0, f64::max);
            for i in 0..rows {
                lambda[i] = (lambda[i] + mu * r[i]).max(0.0);
            }
            if viol <= feas_tol {
                return Ok((s, 0.0));
            }
            if viol > 0.25 * last_viol {
                mu *= 10.0;
            }
            last_viol = viol;
            if mu > 1e14 {
                break;
            }
        }
        Err(Error::InfeasibleStateConstraints)
    }
}

/// One-off solve of the horizon problem.
pub fn solve_horizon(problem: &MpcProblem, model: &FosModel, history: &[DVector<f64>]) -> Result<MpcSolution> {
    MpcController::new(problem.clone(), model)?.solve(history)
}

/// A re-solve of the horizon problem during a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveEvent {
    pub step: usize,
    pub cost: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub trajectory: Trajectory,
    pub solves: Vec<SolveEvent>,
    /// Cost of the solve that produced each applied input.
    pub cycle_costs: Vec<f64>,
    /// Every horizon solution, in solve order.
    pub solutions: Vec<MpcSolution>,
    pub noise_checksum: String,
}

impl ClosedLoopRun {
    /// `sum_k ‖x[k]‖²` over the whole run.
    pub fn energy(&self) -> f64 {
        state_energy(&self.trajectory)
    }

    /// CSV `t,x1..,u1..,cost_cycle`; the input and cost fields of the last row are empty.
    pub fn to_csv(&self) -> String {
        let t = &self.trajectory;
        let (n, m) = (t.n(), self.trajectory.m());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=m {
            out.push_str(&format!(",u{i}"));
        }
        out.push_str(",cost_cycle\n");
        for (k, x) in t.states.iter().enumerate() {
            out.push_str(&format!("{:?}", k as f64 * t.dt));
            for v in x.iter() {
                out.push_str(&format!(",{v:?}"));
            }
            match (t.inputs.get(k), self.cycle_costs.get(k)) {
                (Some(u), Some(c)) => {
                    for v in u.iter() {
                        out.push_str(&format!(",{v:?}"));
                    }
                    out.push_str(&format!(",{c:?}\n"));
                }
                _ => {
                    out.push_str(&",".repeat(m));
                    out.push_str(",\n");
                }
            }
        }
        out
    }
}

pub fn state_energy(t: &Trajectory) -> f64 {
    t.states.iter().map(|x| x.norm_squared()).sum()
}

/// SHA-256 of the little-endian bytes of a noise sequence.
pub fn noise_checksum(noise: &[DVector<f64>]) -> String {
    let mut h = Sha256::new();
    for w in noise {
        for v in w.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Receding-horizon loop: solves at `k = 0, M, 2M, ...`, applies the first
/// `M` inputs of each solution to the full-memory plant, then re-solves.
pub fn run_closed_loop(
    plant: &FosModel,
    problem: &MpcProblem,
    x0: &DVector<f64>,
    steps: usize,
    noise: &Noise,
) -> Result<ClosedLoopRun> {
    if steps == 0 {
        return Err(Error::invalid("K", "must be at least 1"));
    }
    let ctrl = MpcController::new(problem.clone(), plant)?;
    let w = noise.realize(steps, plant.p())?;
    let mut sim = FosSimulator::with_capacity(plant, x0.clone(), steps)?;
    let mut inputs = Vec::with_capacity(steps);
    let mut cycle_costs = Vec::with_capacity(steps);
    let mut solves = Vec::new();
    let mut solutions = Vec::new();
    let m_ctrl = problem.control_horizon;
    for k in 0..steps {
        if k % m_ctrl == 0 {
            let sol = ctrl.solve(sim.history())?;
            solves.push(SolveEvent {
                step: k,
                cost: sol.cost,
                kkt_residual: sol.kkt_residual,
            });
            solutions.push(sol);
        }
        let sol = solutions.last().expect("solved at k = 0");
        let u = sol.inputs[k % m_ctrl].clone();
        sim.step(&u, &w[k])?;
        cycle_costs.push(sol.cost);
        inputs.push(u);
    }
    let mut trajectory = Trajectory::new(sim.history().to_vec(), inputs)?;
    trajectory.noises = Some(w.clone());
    Ok(ClosedLoopRun {
        trajectory,
        solves,
        cycle_costs,
        solutions,
        noise_checksum: noise_checksum(&w),
    })
}

/// Zero-input run of the plant on the same noise as a controlled run.
pub fn uncontrolled_baseline(plant: &FosModel, x0: &DVector<f64>, steps: usize, noise: &Noise) -> Result<(Trajectory, String)> {
    let w = noise.realize(steps, plant.p())?;
    let checksum = noise_checksum(&w);
    let mut t = simulate_fos(plant, x0, &[], &Noise::Sequence(w.clone()), steps)?;
    t.noises = Some(w);
    Ok((t, checksum))
}

/// Scenario file for closed-loop runs.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Path of the plant model file, relative to the scenario file.
    pub model: String,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub steps: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Standard deviation of the i.i.d. Gaussian noise fed through `Bw`.
    #[serde(default = "one")]
    pub sigma: f64,
    pub depth: usize,
    pub horizon: usize,
    pub control_horizon: usize,
    #[serde(rename = "Q", default)]
    pub q: Option<ScalarOrMatrix>,
    #[serde(rename = "R", default)]
    pub r: Option<ScalarOrMatrix>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub u_lo: Option<f64>,
    #[serde(default)]
    pub u_hi: Option<f64>,
    #[serde(default)]
    pub state_constraints: Option<StateConstraintSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl ScalarOrMatrix {
    fn resolve(&self, dim: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            ScalarOrMatrix::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            ScalarOrMatrix::Matrix(rows) => {
                let m = from_rows(rows, rows.first().map_or(0, |r| r.len()), name)?;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(Error::Dimension(format!("{name} must be {dim}x{dim}")));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StateConstraintSpec {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub hard: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn problem(&self, model: &FosModel) -> Result<MpcProblem> {
        let (n, m) = (model.n(), model.m());
        let mut p = MpcProblem::new(n, m, self.depth, self.horizon, self.control_horizon);
        if let Some(q) = &self.q {
            p.q = q.resolve(n, "Q")?;
        }
        if let Some(r) = &self.r {
            p.r = r.resolve(m, "R")?;
        }
        if let Some(c) = &self.c {
            if c.len() != n {
                return Err(Error::Dimension(format!("c has length {}, expected {n}", c.len())));
            }
            p.c = DVector::from_column_slice(c);
        }
        let lo = self.u_lo.unwrap_or(f64::NEG_INFINITY);
        let hi = self.u_hi.unwrap_or(f64::INFINITY);
        if lo > hi {
            return Err(Error::invalid("u_lo", format!("lower bound {lo} exceeds upper bound {hi}")));
        }
        p = p.with_bounds(lo, hi);
        if let Some(sc) = &self.state_constraints {
            p.state_constraints = Some(StateConstraints {
                h: from_rows(&sc.h, n, "H")?,
                b: DVector::from_column_slice(&sc.b),
                hard: sc.hard,
            });
        }
        p.validate(model)?;
        Ok(p)
    }

    pub fn initial_state(&self, model: &FosModel) -> Result<DVector<f64>> {
        match &self.x0 {
            None => Ok(DVector::zeros(model.n())),
            Some(v) if v.len() == model.n() => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::Dimension(format!("x0 has length {}, expected {}", v.len(), model.n()))),
        }
    }

    pub fn noise(&self) -> Noise {
        Noise::Gaussian {
            seed: self.seed.unwrap_or(0),
            sigma: self.sigma,
        }
    }
}
