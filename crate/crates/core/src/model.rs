//! Model containers: single-term fractional systems, multi-term fractional
//! networks and their finite-memory LTI lifts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraccore::{gl_weight, FracWeightTable};
use crate::linalg::{from_rows, rcond, solve_checked, to_rows};

/// Reciprocal condition below which the leading network coefficient is
/// treated as singular.
pub const MIN_RCOND: f64 = 1e-12;

/// Single-term discrete-time fractional system
///
/// ```text
/// Δ^alpha x[k+1] = A x[k] + B u[k] + Bw w[k]
/// ```
///
/// with one fractional order per state channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FosModel {
    alpha: Vec<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    bw: DMatrix<f64>,
}

impl FosModel {
    pub fn new(alpha: Vec<f64>, a: DMatrix<f64>, b: DMatrix<f64>, bw: DMatrix<f64>) -> Result<Self> {
        let n = alpha.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{} but alpha has {n} entries",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if bw.nrows() != n {
            return Err(Error::Dimension(format!("Bw has {} rows, expected {n}", bw.nrows())));
        }
        for (i, &al) in alpha.iter().enumerate() {
            if !al.is_finite() || !(-1.0..2.0).contains(&al) {
                return Err(Error::invalid(
                    format!("alpha[{i}]"),
                    format!("{al} outside [-1, 2)"),
                ));
            }
        }
        if a.iter().chain(b.iter()).chain(bw.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("A/B/Bw", "non-finite entry"));
        }
        Ok(FosModel { alpha, a, b, bw })
    }

    /// Model with unit noise gain `Bw = I`.
    pub fn with_identity_noise(alpha: Vec<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = alpha.len();
        Self::new(alpha, a, b, DMatrix::identity(n, n))
    }

    /// Scalar model with unit input and noise gains.
    pub fn scalar(a: f64, alpha: f64) -> Result<Self> {
        Self::new(
            vec![alpha],
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Noise dimension.
    pub fn p(&self) -> usize {
        self.bw.ncols()
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn bw(&self) -> &DMatrix<f64> {
        &self.bw
    }

    /// Copy of this model with a different input matrix.
    pub fn with_b(&self, b: DMatrix<f64>) -> Result<Self> {
        Self::new(self.alpha.clone(), self.a.clone(), b, self.bw.clone())
    }

    /// True when all channels share one order.
    pub fn is_commensurate(&self) -> bool {
        self.alpha.windows(2).all(|w| w[0] == w[1])
    }

    pub fn weight_table(&self, horizon: usize) -> FracWeightTable {
        FracWeightTable::new(&self.alpha, horizon)
    }

    pub fn to_json(&self) -> String {
        let file = FosModelFile {
            n: self.n(),
            m: self.m(),
            alpha: self.alpha.clone(),
            a: to_rows(&self.a),
            b: to_rows(&self.b),
            bw: to_rows(&self.bw),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FosModelFile = serde_json::from_str(text)?;
        if f.alpha.len() != f.n {
            return Err(Error::invalid("alpha", format!("{} entries but n = {}", f.alpha.len(), f.n)));
        }
        if f.a.len() != f.n || f.b.len() != f.n || f.bw.len() != f.n {
            return Err(Error::invalid("A/B/Bw", format!("row count differs from n = {}", f.n)));
        }
        let p = f.bw.first().map_or(0, |r| r.len());
        let a = from_rows(&f.a, f.n, "A")?;
        let b = from_rows(&f.b, f.m, "B")?;
        let bw = from_rows(&f.bw, p, "Bw")?;
        Self::new(f.alpha, a, b, bw)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FosModelFile {
    n: usize,
    m: usize,
    alpha: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Bw")]
    bw: Vec<Vec<f64>>,
}

/// `[A_0, ..., A_J]` with `A_0 = A + diag(alpha)` and `A_j = -D(alpha, j + 1)`,
/// so that `x[k+1] = sum_j A_j x[k-j] + B u[k] + Bw w[k]`.
pub fn aj_series(model: &FosModel, horizon: usize) -> Vec<DMatrix<f64>> {
    let n = model.n();
    if n == 0 {
        return Vec::new();
    }
    let table = model.weight_table(horizon + 1);
    (0..=horizon)
        .map(|j| {
            if j == 0 {
                // psi(alpha, 1) = -alpha
                model.a() - DMatrix::from_diagonal(&DVector::from_vec(table.column(1)))
            } else {
                -DMatrix::from_diagonal(&DVector::from_vec(table.column(j + 1)))
            }
        })
        .collect()
}

/// One fractional term `matrix * Δ^exponent (.)` of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub exponent: f64,
    pub matrix: Vec<Vec<f64>>,
}

/// Output matrix, either constant or given per time step.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputMap {
    Constant(DMatrix<f64>),
    /// `C_k` for `k = 0, 1, ...`; steps past the end reuse the last entry.
    Schedule(Vec<DMatrix<f64>>),
}

impl OutputMap {
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        match self {
            OutputMap::Constant(c) => c,
            OutputMap::Schedule(cs) => &cs[k.min(cs.len() - 1)],
        }
    }

    pub fn nrows(&self) -> usize {
        self.at(0).nrows()
    }

    pub fn ncols(&self) -> usize {
        self.at(0).ncols()
    }
}

/// Multi-term fractional network
///
/// ```text
/// sum_i A_i Δ^{a_i} x[k+1] = sum_i B_i Δ^{b_i} u[k] + sum_i G_i Δ^{g_i} w[k]
/// z[k] = C_k x[k] + v[k]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTermNetwork {
    state_terms: Vec<(f64, DMatrix<f64>)>,
    input_terms: Vec<(f64, DMatrix<f64>)>,
    disturbance_terms: Vec<(f64, DMatrix<f64>)>,
    output: OutputMap,
    n: usize,
    m: usize,
    p: usize,
    condition: f64,
}

impl MultiTermNetwork {
    pub fn new(
        state_terms: Vec<(f64, DMatrix<f64>)>,
        input_terms: Vec<(f64, DMatrix<f64>)>,
        disturbance_terms: Vec<(f64, DMatrix<f64>)>,
        output: OutputMap,
    ) -> Result<Self> {
        let n = state_terms
            .first()
            .map(|(_, m)| m.nrows())
            .ok_or_else(|| Error::invalid("state_terms", "at least one state term is required"))?;
        let check = |terms: &[(f64, DMatrix<f64>)], name: &str| -> Result<usize> {
            let cols = terms.first().map_or(0, |(_, m)| m.ncols());
            for (i, (e, m)) in terms.iter().enumerate() {
                if !e.is_finite() || *e < 0.0 {
                    return Err(Error::invalid(format!("{name}[{i}].exponent"), format!("{e} is negative")));
                }
                if m.nrows() != n || m.ncols() != cols {
                    return Err(Error::Dimension(format!(
                        "{name}[{i}] is {}x{}, expected {n}x{cols}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("{name}[{i}].matrix"), "non-finite entry"));
                }
            }
            Ok(cols)
        };
        let nn = check(&state_terms, "state_terms")?;
        if nn != n {
            return Err(Error::Dimension("state term matrices must be square".into()));
        }
        let m = check(&input_terms, "input_terms")?;
        let p = check(&disturbance_terms, "disturbance_terms")?;
        match &output {
            OutputMap::Schedule(cs) if cs.is_empty() => {
                return Err(Error::invalid("C", "empty output schedule"));
            }
            OutputMap::Schedule(cs) => {
                let q = cs[0].nrows();
                if cs.iter().any(|c| c.ncols() != n || c.nrows() != q) {
                    return Err(Error::Dimension("output schedule entries must all be q x n".into()));
                }
            }
            OutputMap::Constant(c) => {
                if c.ncols() != n {
                    return Err(Error::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
                }
            }
        }
        let sum: DMatrix<f64> = state_terms
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, (_, m)| acc + m);
        let rc = rcond(&sum);
        if rc < MIN_RCOND {
            return Err(Error::Singular(format!(
                "sum of state-term matrices has reciprocal condition {rc:.3e}"
            )));
        }
        Ok(MultiTermNetwork {
            state_terms,
            input_terms,
            disturbance_terms,
            output,
            n,
            m,
            p,
            condition: 1.0 / rc,
        })
    }

    /// The single-term model written as a network with
    /// `Δ^alpha x[k+1] - A x[k] = (E Δ^alpha - A Δ^0 + A Δ^1) x[k+1]`,
    /// one unit-selector term per channel order.
    pub fn from_fos(model: &FosModel, c: DMatrix<f64>) -> Result<Self> {
        let n = model.n();
        let mut state_terms = Vec::new();
        for i in 0..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, i)] = 1.0;
            state_terms.push((model.alpha()[i], e));
        }
        state_terms.push((0.0, -model.a()));
        state_terms.push((1.0, model.a().clone()));
        let input_terms = if model.m() > 0 {
            vec![(0.0, model.b().clone())]
        } else {
            Vec::new()
        };
        let disturbance_terms = if model.p() > 0 {
            vec![(0.0, model.bw().clone())]
        } else {
            Vec::new()
        };
        Self::new(state_terms, input_terms, disturbance_terms, OutputMap::Constant(c))
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.output.nrows()
    }
    pub fn output(&self) -> &OutputMap {
        &self.output
    }
    /// Condition estimate of `sum_i A_i`.
    pub fn condition(&self) -> f64 {
        self.condition
    }
    pub fn state_terms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.state_terms
    }
    pub fn input_terms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.input_terms
    }
    pub fn disturbance_terms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.disturbance_terms
    }

    pub fn to_json(&self) -> String {
        let terms = |ts: &[(f64, DMatrix<f64>)]| {
            ts.iter()
                .map(|(e, m)| Term {
                    exponent: *e,
                    matrix: to_rows(m),
                })
                .collect()
        };
        let file = NetworkFile {
            state_terms: terms(&self.state_terms),
            input_terms: terms(&self.input_terms),
            disturbance_terms: terms(&self.disturbance_terms),
            c: match &self.output {
                OutputMap::Constant(c) => OutputFile::Constant(to_rows(c)),
                OutputMap::Schedule(cs) => OutputFile::Schedule(cs.iter().map(to_rows).collect()),
            },
        };
        let mut s = serde_json::to_string_pretty(&file).expect("network serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: NetworkFile = serde_json::from_str(text)?;
        let n = f
            .state_terms
            .first()
            .map(|t| t.matrix.len())
            .ok_or_else(|| Error::invalid("state_terms", "empty"))?;
        let parse = |ts: Vec<Term>, name: &str| -> Result<Vec<(f64, DMatrix<f64>)>> {
            ts.into_iter()
                .enumerate()
                .map(|(i, t)| {
                    if t.matrix.len() != n {
                        return Err(Error::Dimension(format!("{name}[{i}] has {} rows, expected {n}", t.matrix.len())));
                    }
                    let cols = t.matrix.first().map_or(0, |r| r.len());
                    Ok((t.exponent, from_rows(&t.matrix, cols, name)?))
                })
                .collect()
        };
        let state_terms = parse(f.state_terms, "state_terms")?;
        let input_terms = parse(f.input_terms, "input_terms")?;
        let disturbance_terms = parse(f.disturbance_terms, "disturbance_terms")?;
        let to_mat = |rows: &Vec<Vec<f64>>| {
            let cols = rows.first().map_or(n, |r| r.len());
            from_rows(rows, cols, "C")
        };
        let output = match f.c {
            OutputFile::Constant(rows) => OutputMap::Constant(to_mat(&rows)?),
            OutputFile::Schedule(list) => OutputMap::Schedule(list.iter().map(to_mat).collect::<Result<_>>()?),
        };
        Self::new(state_terms, input_terms, disturbance_terms, output)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    state_terms: Vec<Term>,
    #[serde(default)]
    input_terms: Vec<Term>,
    #[serde(default)]
    disturbance_terms: Vec<Term>,
    #[serde(rename = "C")]
    c: OutputFile,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OutputFile {
    Constant(Vec<Vec<f64>>),
    Schedule(Vec<Vec<Vec<f64>>>),
}

/// Coefficients of the explicit form
///
/// ```text
/// x[k+1] = sum_{j>=1} Ǎ_j x[k+1-j] + sum_{j>=0} B̌_j u[k-j] + sum_{j>=0} Ǧ_j w[k-j]
/// ```
///
/// Index `j` of each vector holds the lag-`j` coefficient; `state[0] = -I`
/// follows from the same formula and is not used by the recursion.
#[derive(Debug, Clone)]
pub struct NetworkSeries {
    pub state: Vec<DMatrix<f64>>,
    pub input: Vec<DMatrix<f64>>,
    pub disturbance: Vec<DMatrix<f64>>,
    /// `Â_0 = sum_i A_i`
    pub lead: DMatrix<f64>,
}

pub fn network_series(net: &MultiTermNetwork, horizon: usize) -> Result<NetworkSeries> {
    let n = net.n();
    let hat = |terms: &[(f64, DMatrix<f64>)], cols: usize, j: usize| -> DMatrix<f64> {
        terms
            .iter()
            .fold(DMatrix::zeros(n, cols), |acc, (e, m)| acc + m * gl_weight(*e, j))
    };
    let lead = hat(net.state_terms(), n, 0);
    let solve = |rhs: &DMatrix<f64>| solve_checked(&lead, rhs, MIN_RCOND, "sum of state-term matrices");
    let mut state = Vec::with_capacity(horizon + 1);
    let mut input = Vec::with_capacity(horizon + 1);
    let mut disturbance = Vec::with_capacity(horizon + 1);
    for j in 0..=horizon {
        state.push(-solve(&hat(net.state_terms(), n, j))?);
        input.push(solve(&hat(net.input_terms(), net.m(), j))?);
        disturbance.push(solve(&hat(net.disturbance_terms(), net.p(), j))?);
    }
    Ok(NetworkSeries {
        state,
        input,
        disturbance,
        lead,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiftKind {
    /// Stacks `p` past states of a single-term model.
    PAugment,
    /// Stacks `v` past states and `v` past inputs of a network.
    VApprox,
}

/// Finite-memory LTI lift `x~[k+1] = Ã x~[k] + B̃ u[k] + G̃ w[k]`, `y[k] = C̃_k x~[k]`.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub kind: LiftKind,
    pub depth: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// Output map on the base state; the lifted map pads it with zeros.
    pub c_base: OutputMap,
    pub n: usize,
    pub m: usize,
    pub q: usize,
}

impl AugmentedModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `C̃_k = [C_k, 0, ..., 0]`.
    pub fn output_at(&self, k: usize) -> DMatrix<f64> {
        let c = self.c_base.at(k);
        let mut out = DMatrix::zeros(c.nrows(), self.dim());
        out.columns_mut(0, self.n).copy_from(c);
        out
    }

    pub fn with_output(mut self, c: OutputMap) -> Result<Self> {
        if c.ncols() != self.n {
            return Err(Error::Dimension(format!("output map has {} columns, expected {}", c.ncols(), self.n)));
        }
        self.q = c.nrows();
        self.c_base = c;
        Ok(self)
    }

    /// Lifted initial state `[x0, 0, ..., 0]`.
    pub fn lift_state(&self, x0: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.n).copy_from(x0);
        out
    }

    pub fn base_state(&self, lifted: &DVector<f64>) -> DVector<f64> {
        lifted.rows(0, self.n).into_owned()
    }

    /// `Ã * rhs`, using the companion structure for `p`-augmented lifts.
    pub fn apply(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.kind != LiftKind::PAugment {
            return &self.a * rhs;
        }
        let n = self.n;
        let mut out = DMatrix::zeros(self.dim(), rhs.ncols());
        let mut top = DMatrix::zeros(n, rhs.ncols());
        for j in 0..self.depth {
            top += self.a.view((0, j * n), (n, n)) * rhs.rows(j * n, n);
        }
        out.rows_mut(0, n).copy_from(&top);
        if self.depth > 1 {
            out.rows_mut(n, (self.depth - 1) * n)
                .copy_from(&rhs.rows(0, (self.depth - 1) * n));
        }
        out
    }
}

/// `p`-augmented lift of a single-term model: block companion `Ã` with first
/// block row `[A_0 ... A_{p-1}]`, `B̃ = [B; 0]`, `G̃ = [Bw; 0]`, `C̃ = [I, 0]`.
pub fn augment_p(model: &FosModel, p: usize) -> Result<AugmentedModel> {
    if p < 1 {
        return Err(Error::Dimension("augmentation depth p must be at least 1".into()));
    }
    let n = model.n();
    let d = n * p;
    let mut a = DMatrix::zeros(d, d);
    for (j, aj) in aj_series(model, p - 1).iter().enumerate() {
        a.view_mut((0, j * n), (n, n)).copy_from(aj);
    }
    for j in 1..p {
        a.view_mut((j * n, (j - 1) * n), (n, n)).fill_with_identity();
    }
    let mut b = DMatrix::zeros(d, model.m());
    b.rows_mut(0, n).copy_from(model.b());
    let mut g = DMatrix::zeros(d, model.p());
    g.rows_mut(0, n).copy_from(model.bw());
    Ok(AugmentedModel {
        kind: LiftKind::PAugment,
        depth: p,
        a,
        b,
        g,
        c_base: OutputMap::Constant(DMatrix::identity(n, n)),
        n,
        m: model.m(),
        q: n,
    })
}

/// `v`-approximation of a network. The lifted state is
/// `[x[k], ..., x[k-v+1], u[k-1], ..., u[k-v]]`; the truncated history and the
/// disturbance enter through `G̃ = [I; 0]` on the newest state block.
pub fn augment_v(net: &MultiTermNetwork, v: usize) -> Result<AugmentedModel> {
    if v < 1 {
        return Err(Error::Dimension("approximation depth v must be at least 1".into()));
    }
    let series = network_series(net, v)?;
    let (n, m) = (net.n(), net.m());
    let xs = v * n;
    let d = v * (n + m);
    let mut a = DMatrix::zeros(d, d);
    for j in 1..=v {
        a.view_mut((0, (j - 1) * n), (n, n)).copy_from(&series.state[j]);
        if m > 0 {
            a.view_mut((0, xs + (j - 1) * m), (n, m)).copy_from(&series.input[j]);
        }
    }
    for j in 1..v {
        a.view_mut((j * n, (j - 1) * n), (n, n)).fill_with_identity();
        if m > 0 {
            a.view_mut((xs + j * m, xs + (j - 1) * m), (m, m)).fill_with_identity();
        }
    }
    let mut b = DMatrix::zeros(d, m);
    if m > 0 {
        b.rows_mut(0, n).copy_from(&series.input[0]);
        b.view_mut((xs, 0), (m, m)).fill_with_identity();
    }
    let mut g = DMatrix::zeros(d, n);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    Ok(AugmentedModel {
        kind: LiftKind::VApprox,
        depth: v,
        a,
        b,
        g,
        c_base: net.output().clone(),
        n,
        m,
        q: net.q(),
    })
}
