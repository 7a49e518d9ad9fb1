//! Small dense linear-algebra helpers shared by the analysis, estimation and
//! control modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for numerical rank.
pub const RANK_RTOL: f64 = 1e-12;

/// Singular values retained with `sigma > scale * sigma_max * rtol`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Smallest singular value above the threshold (0 when the rank is 0).
    pub smallest_retained: f64,
}

pub fn numerical_rank(m: &DMatrix<f64>, scale: usize, rtol: f64) -> RankInfo {
    if m.nrows() == 0 || m.ncols() == 0 {
        return RankInfo {
            rank: 0,
            singular_values: Vec::new(),
            smallest_retained: 0.0,
        };
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let thresh = scale.max(1) as f64 * smax * rtol;
    let kept: Vec<f64> = sv.iter().copied().filter(|&s| s > thresh && s > 0.0).collect();
    RankInfo {
        rank: kept.len(),
        smallest_retained: kept.last().copied().unwrap_or(0.0),
        singular_values: sv,
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Validates that `m` is square, symmetric to `1e-10` (relative) and has a
/// strictly positive smallest eigenvalue.
pub fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd(name.to_string()));
    }
    let scale = m.amax().max(1.0);
    if max_asymmetry(m) > 1e-10 * scale {
        return Err(Error::NotSpd(format!("{name} (asymmetric)")));
    }
    if m.nrows() > 0 && min_sym_eigenvalue(m) <= 0.0 {
        return Err(Error::NotSpd(name.to_string()));
    }
    Ok(())
}

/// Solves `m x = rhs` for symmetric positive definite `m` via Cholesky.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    Ok(chol.solve(rhs))
}

/// Inverse of an SPD matrix (used only for weight matrices, never for innovations).
pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    solve_spd(m, &DMatrix::identity(n, n), what)
}

/// Reciprocal 1-norm condition estimate computed from the explicit inverse.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let norm1 = |a: &DMatrix<f64>| {
        a.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match m.clone().try_inverse() {
        Some(inv) => {
            let r = 1.0 / (norm1(m) * norm1(&inv));
            if r.is_finite() {
                r
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// LU solve with a reciprocal-condition guard.
pub fn solve_checked(m: &DMatrix<f64>, rhs: &DMatrix<f64>, min_rcond: f64, what: &str) -> Result<DMatrix<f64>> {
    let rc = rcond(m);
    if rc < min_rcond {
        return Err(Error::Singular(format!("{what}: reciprocal condition {rc:.3e}")));
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(what.to_string()))
}

pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn stack_vectors(vs: &[DVector<f64>]) -> DVector<f64> {
    let len: usize = vs.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(len);
    let mut off = 0;
    for v in vs {
        out.rows_mut(off, v.len()).copy_from(v);
        off += v.len();
    }
    out
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{name}: row of length {} where {ncols} expected",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_simple_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(numerical_rank(&m, 2, RANK_RTOL).rank, 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), 3, RANK_RTOL).rank, 0);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), 3, RANK_RTOL).rank, 3);
    }

    #[test]
    fn spd_checks() {
        assert!(check_spd(&DMatrix::identity(2, 2), "I").is_ok());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(check_spd(&m, "M"), Err(Error::NotSpd(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(check_spd(&m, "M"), Err(Error::NotSpd(_))));
    }

    #[test]
    fn singular_solve_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(solve_checked(&m, &DMatrix::identity(2, 2), 1e-12, "m").is_err());
    }
}
