//! Box-constrained convex quadratic programs with optional one-sided
//! quadratic penalties:
//!
//! ```text
//! minimize  ½ uᵀ H u + gᵀ u + Σ_i ½ β_i max(0, a_iᵀ u − b_i)²
//! subject to lo ≤ u ≤ hi
//! ```
//!
//! solved by a projected Newton method with an Armijo search along the
//! projection arc.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One-sided quadratic penalties `½ β_i max(0, a_iᵀ u − b_i)²`; `a` holds the
/// rows `a_iᵀ`.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub beta: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct BoxQp<'a> {
    pub h: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub lo: &'a DVector<f64>,
    pub hi: &'a DVector<f64>,
    pub penalty: Option<&'a Penalty>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub objective: f64,
    /// Norm of the projected gradient at `u`.
    pub kkt_residual: f64,
    /// `-1` at the lower bound, `1` at the upper bound, `0` free.
    pub active: Vec<i8>,
    pub iterations: usize,
}

const MAX_ITER: usize = 500;

impl BoxQp<'_> {
    fn check(&self) -> Result<()> {
        let n = self.g.len();
        if self.h.nrows() != n || self.h.ncols() != n || self.lo.len() != n || self.hi.len() != n {
            return Err(Error::Dimension("inconsistent QP data".into()));
        }
        if let Some(p) = self.penalty {
            if p.a.ncols() != n || p.a.nrows() != p.b.len() || p.b.len() != p.beta.len() {
                return Err(Error::Dimension("inconsistent penalty data".into()));
            }
        }
        for i in 0..n {
            if !(self.lo[i] <= self.hi[i]) {
                return Err(Error::invalid("bounds", format!("lower bound exceeds upper bound at {i}")));
            }
        }
        Ok(())
    }

    fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let mut f = 0.5 * u.dot(&(self.h * u)) + self.g.dot(u);
        if let Some(p) = self.penalty {
            let r = &p.a * u - &p.b;
            for i in 0..r.len() {
                if r[i] > 0.0 {
                    f += 0.5 * p.beta[i] * r[i] * r[i];
                }
            }
        }
        f
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut grad = self.h * u + self.g;
        if let Some(p) = self.penalty {
            let r = &p.a * u - &p.b;
            for i in 0..r.len() {
                if r[i] > 0.0 {
                    grad += p.a.row(i).transpose() * (p.beta[i] * r[i]);
                }
            }
        }
        grad
    }

    /// Gradient with components removed where a bound blocks descent.
    pub fn projected_gradient(&self, u: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let gi = grad[i];
            if (u[i] <= self.lo[i] && gi > 0.0) || (u[i] >= self.hi[i] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
    }

    /// Minimizes from `start` (projected onto the box) until the projected
    /// gradient is at most `tol`.
    pub fn solve(&self, start: &DVector<f64>, tol: f64) -> Result<QpSolution> {
        self.check()?;
        let n = self.g.len();
        let mut u = self.project(start);
        let mut f = self.objective(&u);
        let mut iterations = 0;
        loop {
            let grad = self.gradient(&u);
            let pg = self.projected_gradient(&u, &grad);
            let res = pg.norm();
            if res <= tol || iterations >= MAX_ITER || n == 0 {
                let active = (0..n)
                    .map(|i| {
                        if u[i] <= self.lo[i] && self.lo[i] > f64::NEG_INFINITY {
                            -1
                        } else if u[i] >= self.hi[i] && self.hi[i] < f64::INFINITY {
                            1
                        } else {
                            0
                        }
                    })
                    .collect();
                return Ok(QpSolution {
                    u,
                    objective: f,
                    kkt_residual: res,
                    active,
                    iterations,
                });
            }
            iterations += 1;
            // components close to a bound with the gradient pushing outward
            let proj_step = (&u - self.project(&(&u - &grad))).norm();
            let eps = proj_step.min(1e-3);
            let free: Vec<usize> = (0..n)
                .filter(|&i| {
                    let near_lo = u[i] <= self.lo[i] + eps && grad[i] > 0.0;
                    let near_hi = u[i] >= self.hi[i] - eps && grad[i] < 0.0;
                    !(near_lo || near_hi)
                })
                .collect();
            let mut dir = -grad.clone();
            if !free.is_empty() {
                let hess = self.hessian(&u);
                let hf = DMatrix::from_fn(free.len(), free.len(), |r, c| hess[(free[r], free[c])]);
                let gf = DVector::from_fn(free.len(), |r, _| grad[free[r]]);
                if let Some(chol) = hf.cholesky() {
                    let step = chol.solve(&gf);
                    for (r, &i) in free.iter().enumerate() {
                        dir[i] = -step[r];
                    }
                }
            }
            // Armijo search along the projection arc
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = self.project(&(&u + &dir * t));
                let fc = self.objective(&cand);
                let decrease = grad.dot(&(&cand - &u));
                if fc <= f + 1e-4 * decrease.min(0.0) && fc <= f {
                    accepted = cand != u || fc < f;
                    u = cand;
                    f = fc;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // fall back to a projected gradient step with backtracking
                let mut t = 1.0 / self.hessian(&u).diagonal().amax().max(1e-300);
                for _ in 0..60 {
                    let cand = self.project(&(&u - &grad * t));
                    let fc = self.objective(&cand);
                    if fc < f {
                        u = cand;
                        f = fc;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !accepted {
                iterations = MAX_ITER;
            }
        }
    }

    fn hessian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.h.clone();
        if let Some(p) = self.penalty {
            let r = &p.a * u - &p.b;
            for i in 0..r.len() {
                if r[i] > 0.0 {
                    let row = p.a.row(i);
                    h += row.transpose() * row * p.beta[i];
                }
            }
        }
        h
    }
}
