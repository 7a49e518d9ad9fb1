//! Grünwald–Letnikov fractional-difference weights.
//!
//! The weight of lag `j` for order `alpha` is
//!
//! ```text
//! psi(alpha, j) = c_j = (-1)^j * binom(alpha, j) = Gamma(j - alpha) / (Gamma(-alpha) * Gamma(j + 1))
//! ```
//!
//! and the causal fractional difference of a sequence is
//! `Δ^alpha x[k] = sum_{j=0..=k} psi(alpha, j) * x[k - j]`, with `x` taken as zero
//! before index 0.
//!
//! Production code uses the product recurrence [`gl_weight`]. The Gamma
//! route [`gl_weight_gamma`] is kept as an independent cross-check.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `c_j^alpha` by the recurrence `c_0 = 1`, `c_j = c_{j-1} * (j - 1 - alpha) / j`.
pub fn gl_weight(alpha: f64, j: usize) -> f64 {
    let mut c = 1.0;
    for i in 1..=j {
        c *= (i as f64 - 1.0 - alpha) / i as f64;
    }
    c
}

/// `psi(alpha, j)` through log-Gamma and the reflection formula.
///
/// Fails with [`Error::Pole`] when `alpha` is a non-negative integer, since
/// `Gamma(-alpha)` is then a pole; use [`gl_weight`] for those orders.
pub fn gl_weight_gamma(alpha: f64, j: usize) -> Result<f64> {
    if alpha >= 0.0 && alpha.fract() == 0.0 {
        return Err(Error::Pole(-alpha));
    }
    let (ln_num, s_num) = ln_gamma_signed(j as f64 - alpha)?;
    let (ln_den, s_den) = ln_gamma_signed(-alpha)?;
    let (ln_fact, _) = ln_gamma_signed(j as f64 + 1.0)?;
    Ok(s_num * s_den * (ln_num - ln_den - ln_fact).exp())
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// B_{2k} / (2k (2k - 1)) for k = 1..=8
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// `(ln|Gamma(x)|, sign(Gamma(x)))` for real `x` away from the poles.
///
/// Stirling series for `x >= 15`, upward recurrence below that, and the
/// reflection formula `Gamma(x) Gamma(1 - x) = pi / sin(pi x)` for `x < 0.5`.
pub fn ln_gamma_signed(x: f64) -> Result<(f64, f64)> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma of non-finite {x}")));
    }
    if x <= 0.0 && x.fract() == 0.0 {
        return Err(Error::Pole(x));
    }
    if x < 0.5 {
        let s = sin_pi(x);
        let (lg, _) = ln_gamma_signed(1.0 - x)?;
        let val = PI.ln() - s.abs().ln() - lg;
        return Ok((val, s.signum()));
    }
    Ok((ln_gamma_positive(x), 1.0))
}

fn ln_gamma_positive(x: f64) -> f64 {
    const SHIFT_TO: f64 = 15.0;
    let mut shift = 0.0;
    let mut z = x;
    let mut prod = 1.0;
    while z < SHIFT_TO {
        prod *= z;
        z += 1.0;
        if prod > 1e280 {
            shift += prod.ln();
            prod = 1.0;
        }
    }
    shift += prod.ln();
    stirling(z) - shift
}

fn stirling(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in STIRLING {
        series += c * pow;
        pow *= inv2;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series
}

/// `sin(pi x)` with exact argument reduction.
fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).round();
    (PI * r).sin()
}

/// Precomputed weights `psi(alpha_i, j)` for every channel `i` and lag `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct FracWeightTable {
    orders: Vec<f64>,
    horizon: usize,
    weights: Vec<Vec<f64>>,
}

impl FracWeightTable {
    pub fn new(alphas: &[f64], horizon: usize) -> Self {
        let weights = alphas
            .iter()
            .map(|&alpha| {
                let mut row = Vec::with_capacity(horizon + 1);
                let mut c = 1.0;
                row.push(c);
                for j in 1..=horizon {
                    c *= (j as f64 - 1.0 - alpha) / j as f64;
                    row.push(c);
                }
                row
            })
            .collect();
        FracWeightTable {
            orders: alphas.to_vec(),
            horizon,
            weights,
        }
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.orders.len()
    }

    /// `psi(alpha_channel, j)`. Panics if `j > horizon`.
    #[inline]
    pub fn weight(&self, channel: usize, j: usize) -> f64 {
        self.weights[channel][j]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        &self.weights[channel]
    }

    /// Diagonal of `D(alpha, j)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.weights.iter().map(|w| w[j]).collect()
    }

    /// Fractional difference at index `k` of per-channel sequences, reusing this table.
    pub fn difference(&self, series: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
        if series.len() != self.channels() {
            return Err(Error::Dimension(format!(
                "{} series for {} orders",
                series.len(),
                self.channels()
            )));
        }
        if k > self.horizon {
            return Err(Error::Index {
                index: k,
                len: self.horizon + 1,
            });
        }
        series
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| {
                if k >= x.len() {
                    return Err(Error::Index {
                        index: k,
                        len: x.len(),
                    });
                }
                Ok((0..=k).map(|j| w[j] * x[k - j]).sum())
            })
            .collect()
    }
}

pub fn build_weight_table(alphas: &[f64], horizon: usize) -> FracWeightTable {
    FracWeightTable::new(alphas, horizon)
}

/// `Δ^{alpha_i} x_i[k]` for each channel, with zero history before index 0.
pub fn frac_difference(series: &[Vec<f64>], alphas: &[f64], k: usize) -> Result<Vec<f64>> {
    if let Some(short) = series.iter().find(|x| k >= x.len()) {
        return Err(Error::Index {
            index: k,
            len: short.len(),
        });
    }
    FracWeightTable::new(alphas, k).difference(series, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recursive_examples() {
        assert_eq!(gl_weight(0.5, 0), 1.0);
        assert_eq!(gl_weight(1.0, 2), 0.0);
        assert!((gl_weight(0.5, 2) + 0.125).abs() < 1e-15);
    }

    #[test]
    fn gamma_examples() {
        assert!((gl_weight_gamma(0.3, 0).unwrap() - 1.0).abs() < 1e-14);
        assert!((gl_weight_gamma(0.3, 1).unwrap() + 0.3).abs() < 1e-14);
        assert!((gl_weight_gamma(0.5, 2).unwrap() + 0.125).abs() < 1e-14);
    }

    #[test]
    fn gamma_pole_for_integer_order() {
        assert!(matches!(gl_weight_gamma(1.0, 3), Err(Error::Pole(_))));
        assert!(matches!(gl_weight_gamma(0.0, 0), Err(Error::Pole(_))));
        // negative non-integer orders are fine
        let v = gl_weight_gamma(-0.5, 3).unwrap();
        assert!((v - gl_weight(-0.5, 3)).abs() < 1e-13);
    }

    #[test]
    fn ln_gamma_known_values() {
        // Gamma(n) = (n-1)!
        let mut fact = 1.0f64;
        for n in 1..30u32 {
            if n > 1 {
                fact *= (n - 1) as f64;
            }
            let (lg, s) = ln_gamma_signed(n as f64).unwrap();
            assert_eq!(s, 1.0);
            if n > 2 {
                assert!(((lg - fact.ln()) / fact.ln()).abs() < 1e-13, "n={n}");
            } else {
                assert!(lg.abs() < 1e-14);
            }
        }
        let (lg, _) = ln_gamma_signed(0.5).unwrap();
        assert!((lg - 0.5 * PI.ln()).abs() < 1e-14);
        // Gamma(-0.5) = -2 sqrt(pi)
        let (lg, s) = ln_gamma_signed(-0.5).unwrap();
        assert_eq!(s, -1.0);
        assert!((lg - (2.0 * PI.sqrt()).ln()).abs() < 1e-14);
        // Gamma(-1.5) = 4 sqrt(pi) / 3
        let (lg, s) = ln_gamma_signed(-1.5).unwrap();
        assert_eq!(s, 1.0);
        assert!((lg - (4.0 * PI.sqrt() / 3.0).ln()).abs() < 1e-14);
        // ln Gamma(200) reference value
        let (lg, _) = ln_gamma_signed(200.0).unwrap();
        assert!((lg - 857.933_669_825_857_2).abs() / 857.9 < 1e-14);
    }

    #[test]
    fn table_examples() {
        let t = build_weight_table(&[1.0, 1.0], 3);
        for i in 0..2 {
            assert_eq!(t.channel(i), &[1.0, -1.0, 0.0, 0.0]);
        }
        let t = build_weight_table(&[0.5], 2);
        assert_eq!(t.channel(0), &[1.0, -0.5, -0.125]);
        let t = build_weight_table(&[], 5);
        assert_eq!(t.channels(), 0);
        assert_eq!(t.column(2), Vec::<f64>::new());
    }

    #[test]
    fn difference_examples() {
        let d = frac_difference(&[vec![3.0, 5.0]], &[1.0], 1).unwrap();
        assert_eq!(d, vec![2.0]);
        let c = 4.25;
        for k in 0..5 {
            let d = frac_difference(&[vec![c; 5]], &[0.0], k).unwrap();
            assert_eq!(d, vec![c]);
        }
        let d = frac_difference(&[vec![1.0, 1.0, 1.0]], &[0.5], 2).unwrap();
        assert!((d[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn difference_out_of_range() {
        assert!(matches!(
            frac_difference(&[vec![1.0, 2.0]], &[0.5], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
        let t = build_weight_table(&[0.5], 1);
        assert!(t.difference(&[vec![1.0, 2.0, 3.0]], 2).is_err());
    }

    #[test]
    fn first_difference_at_zero_uses_zero_history() {
        let d = frac_difference(&[vec![3.0, 5.0]], &[1.0], 0).unwrap();
        assert_eq!(d, vec![3.0]);
    }
}
