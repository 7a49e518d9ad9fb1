//! Forward simulation of fractional systems and their lifts.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{aj_series, network_series, AugmentedModel, FosModel, MultiTermNetwork};

/// Sampled sequences of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x[0..=K]`
    pub states: Vec<DVector<f64>>,
    /// `u[0..K]`
    pub inputs: Vec<DVector<f64>>,
    /// `y[0..=K]` when an output map was applied.
    pub outputs: Option<Vec<DVector<f64>>>,
    /// `w[0..K]` when noise was injected.
    pub noises: Option<Vec<DVector<f64>>>,
    /// Sample period in seconds (metadata only).
    pub dt: f64,
    pub labels: Vec<String>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        let n = states.first().map_or(0, |x| x.len());
        let t = Trajectory {
            labels: (1..=n).map(|i| format!("x{i}")).collect(),
            states,
            inputs,
            outputs: None,
            noises: None,
            dt: 1.0,
        };
        t.validate()?;
        Ok(t)
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1).max(self.inputs.len())
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn m(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn validate(&self) -> Result<()> {
        let same_len = |vs: &[DVector<f64>], what: &str| -> Result<()> {
            if let Some(first) = vs.first() {
                if vs.iter().any(|v| v.len() != first.len()) {
                    return Err(Error::Dimension(format!("{what} rows differ in length")));
                }
            }
            if vs.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
                return Err(Error::invalid(what, "non-finite entry"));
            }
            Ok(())
        };
        same_len(&self.states, "states")?;
        same_len(&self.inputs, "inputs")?;
        if !self.states.is_empty() && !self.inputs.is_empty() && self.inputs.len() + 1 != self.states.len() {
            return Err(Error::Dimension(format!(
                "{} inputs for {} states",
                self.inputs.len(),
                self.states.len()
            )));
        }
        if let Some(y) = &self.outputs {
            same_len(y, "outputs")?;
            if !self.states.is_empty() && y.len() != self.states.len() {
                return Err(Error::Dimension("output rows differ from state rows".into()));
            }
        }
        if let Some(w) = &self.noises {
            same_len(w, "noises")?;
        }
        Ok(())
    }

    /// Per-channel state series, the layout used by the identification code.
    pub fn state_channels(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| self.states.iter().map(|x| x[i]).collect())
            .collect()
    }

    /// CSV with header `t,x1..xn[,u1..um][,y1..yq]`. Input fields on the last
    /// row are empty since `u[K]` does not exist.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows = self
            .states
            .len()
            .max(self.outputs.as_ref().map_or(0, |y| y.len()));
        let n = self.n();
        let m = self.m();
        let q = self.outputs.as_ref().and_then(|y| y.first()).map_or(0, |y| y.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=q).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        let fmt = |v: f64| format!("{v:?}");
        for k in 0..rows {
            let mut rec = vec![fmt(k as f64 * self.dt)];
            if let Some(x) = self.states.get(k) {
                rec.extend(x.iter().map(|&v| fmt(v)));
            }
            match self.inputs.get(k) {
                Some(u) => rec.extend(u.iter().map(|&v| fmt(v))),
                None => rec.extend(std::iter::repeat_n(String::new(), m)),
            }
            if let Some(y) = self.outputs.as_ref().and_then(|ys| ys.get(k)) {
                rec.extend(y.iter().map(|&v| fmt(v)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads the CSV layout of [`Trajectory::write_csv`]; any of the `x`, `u`
    /// and `y` blocks may be absent.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers()?.clone();
        let mut cols: [Vec<usize>; 3] = Default::default();
        let mut t_col = None;
        for (c, name) in header.iter().enumerate() {
            let block = match name.chars().next() {
                Some('t') if name == "t" => {
                    t_col = Some(c);
                    continue;
                }
                Some('x') => 0,
                Some('u') => 1,
                Some('y') => 2,
                _ => return Err(Error::Parse(format!("unknown column `{name}`"))),
            };
            let idx: usize = name[1..]
                .parse()
                .map_err(|_| Error::Parse(format!("bad column name `{name}`")))?;
            if idx != cols[block].len() + 1 {
                return Err(Error::Parse(format!("column `{name}` out of order")));
            }
            cols[block].push(c);
        }
        let mut times = Vec::new();
        let mut blocks: [Vec<DVector<f64>>; 3] = Default::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<Option<f64>> {
                let s = rec.get(c).unwrap_or("");
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Parse(format!("row {}: bad number `{s}`", line + 2)))
            };
            if let Some(c) = t_col {
                if let Some(t) = parse(c)? {
                    times.push(t);
                }
            }
            for (b, idx) in cols.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let vals: Vec<Option<f64>> = idx.iter().map(|&c| parse(c)).collect::<Result<_>>()?;
                if vals.iter().all(|v| v.is_none()) {
                    continue;
                }
                if vals.iter().any(|v| v.is_none()) {
                    return Err(Error::Parse(format!("row {}: partially empty block", line + 2)));
                }
                blocks[b].push(DVector::from_iterator(vals.len(), vals.into_iter().flatten()));
            }
        }
        let [states, mut inputs, outputs] = blocks;
        let rows = states.len().max(outputs.len());
        if rows > 0 && inputs.len() >= rows {
            inputs.truncate(rows - 1);
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 1.0 };
        let n = cols[0].len();
        let t = Trajectory {
            labels: (1..=n).map(|i| format!("x{i}")).collect(),
            states,
            inputs,
            outputs: if cols[2].is_empty() { None } else { Some(outputs) },
            noises: None,
            dt,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Where the process noise `w[k]` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Zero,
    Sequence(Vec<DVector<f64>>),
    Gaussian { seed: u64, sigma: f64 },
}

impl Noise {
    /// Materializes `steps` samples of dimension `dim`.
    pub fn realize(&self, steps: usize, dim: usize) -> Result<Vec<DVector<f64>>> {
        match self {
            Noise::Zero => Ok(vec![DVector::zeros(dim); steps]),
            Noise::Gaussian { seed, sigma } => gaussian_noise(*seed, steps, dim, *sigma),
            Noise::Sequence(ws) => {
                if ws.len() < steps {
                    return Err(Error::Dimension(format!("{} noise samples for {steps} steps", ws.len())));
                }
                if let Some(w) = ws.iter().find(|w| w.len() != dim) {
                    return Err(Error::Dimension(format!("noise sample of length {}, expected {dim}", w.len())));
                }
                Ok(ws[..steps].to_vec())
            }
        }
    }
}

/// I.i.d. `N(0, sigma^2)` samples from a seeded ChaCha8 stream.
pub fn gaussian_noise(seed: u64, steps: usize, dim: usize, sigma: f64) -> Result<Vec<DVector<f64>>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("{sigma} is not a finite non-negative number")));
    }
    if sigma == 0.0 {
        return Ok(vec![DVector::zeros(dim); steps]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    Ok((0..steps)
        .map(|_| DVector::from_fn(dim, |_, _| normal.sample(&mut rng)))
        .collect())
}

/// Zero-mean Gaussian samples with covariance `cov` (lower Cholesky factor times
/// unit samples).
pub fn gaussian_noise_cov(seed: u64, steps: usize, cov: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let dim = cov.nrows();
    if dim == 0 {
        return Ok(vec![DVector::zeros(0); steps]);
    }
    let l = crate::linalg::symmetrize(cov)
        .cholesky()
        .ok_or_else(|| Error::NotSpd("noise covariance".into()))?
        .l();
    Ok(gaussian_noise(seed, steps, dim, 1.0)?.into_iter().map(|z| &l * z).collect())
}

fn check_inputs(u: &[DVector<f64>], m: usize, steps: usize) -> Result<()> {
    if u.is_empty() {
        return Ok(());
    }
    if u.len() < steps {
        return Err(Error::Dimension(format!("{} inputs for {steps} steps", u.len())));
    }
    if let Some(bad) = u.iter().find(|v| v.len() != m) {
        return Err(Error::Dimension(format!("input of length {}, expected {m}", bad.len())));
    }
    Ok(())
}

fn input_or_zero(u: &[DVector<f64>], k: usize, m: usize) -> DVector<f64> {
    u.get(k).cloned().unwrap_or_else(|| DVector::zeros(m))
}

/// Step-by-step simulator of a single-term model keeping the full state history.
///
/// Memory terms use the diagonal structure of `A_j` for `j >= 1`, so a step at
/// time `k` costs `O(n^2 + k n)`.
#[derive(Debug, Clone)]
pub struct FosSimulator {
    model: FosModel,
    weights: Vec<Vec<f64>>,
    history: Vec<DVector<f64>>,
    memory_cap: Option<usize>,
}

impl FosSimulator {
    pub fn new(model: &FosModel, x0: DVector<f64>) -> Result<Self> {
        Self::with_capacity(model, x0, 64)
    }

    /// Preallocates weights for `horizon` steps.
    pub fn with_capacity(model: &FosModel, x0: DVector<f64>, horizon: usize) -> Result<Self> {
        if x0.len() != model.n() {
            return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), model.n())));
        }
        let table = model.weight_table(horizon + 1);
        let weights = (0..model.n()).map(|i| table.channel(i).to_vec()).collect();
        Ok(FosSimulator {
            model: model.clone(),
            weights,
            history: vec![x0],
            memory_cap: None,
        })
    }

    /// Keeps only the `cap` most recent states in the memory sum.
    pub fn set_memory_cap(&mut self, cap: Option<usize>) {
        self.memory_cap = cap;
    }

    pub fn model(&self) -> &FosModel {
        &self.model
    }

    /// Current time index `k`.
    pub fn time(&self) -> usize {
        self.history.len() - 1
    }

    pub fn state(&self) -> &DVector<f64> {
        self.history.last().expect("history is never empty")
    }

    pub fn history(&self) -> &[DVector<f64>] {
        &self.history
    }

    fn ensure_weights(&mut self, j: usize) {
        for (i, row) in self.weights.iter_mut().enumerate() {
            let alpha = self.model.alpha()[i];
            while row.len() <= j {
                let l = row.len();
                let prev = row[l - 1];
                row.push(prev * (l as f64 - 1.0 - alpha) / l as f64);
            }
        }
    }

    /// Free-response part of `x[k+1]` (without input and noise).
    pub fn drift(&mut self) -> DVector<f64> {
        let k = self.time();
        let depth = self.memory_cap.map_or(k + 1, |c| c.min(k + 1));
        self.ensure_weights(depth);
        let mut next = self.model.a() * &self.history[k];
        for i in 0..self.model.n() {
            let w = &self.weights[i];
            let mut acc = 0.0;
            for j in 1..=depth {
                acc += w[j] * self.history[k + 1 - j][i];
            }
            next[i] -= acc;
        }
        next
    }

    /// Advances to `x[k+1]` and returns it.
    pub fn step(&mut self, u: &DVector<f64>, w: &DVector<f64>) -> Result<&DVector<f64>> {
        if u.len() != self.model.m() || w.len() != self.model.p() {
            return Err(Error::Dimension(format!(
                "step with input length {} and noise length {}, expected {} and {}",
                u.len(),
                w.len(),
                self.model.m(),
                self.model.p()
            )));
        }
        let mut next = self.drift();
        if self.model.m() > 0 {
            next += self.model.b() * u;
        }
        if self.model.p() > 0 {
            next += self.model.bw() * w;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: self.time() + 1 });
        }
        self.history.push(next);
        Ok(self.state())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Number of past states kept in the memory sum; `None` keeps all.
    pub memory_cap: Option<usize>,
    /// Sample period stored in the trajectory.
    pub dt: Option<f64>,
}

/// `x[k+1] = sum_{j=0}^{k} A_j x[k-j] + B u[k] + Bw w[k]` for `k < K`.
/// An empty `u` means zero input.
pub fn simulate_fos(model: &FosModel, x0: &DVector<f64>, u: &[DVector<f64>], w: &Noise, steps: usize) -> Result<Trajectory> {
    simulate_fos_with(model, x0, u, w, steps, &SimOptions::default())
}

pub fn simulate_fos_with(
    model: &FosModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    w: &Noise,
    steps: usize,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_inputs(u, model.m(), steps)?;
    let noise = w.realize(steps, model.p())?;
    let mut sim = FosSimulator::with_capacity(model, x0.clone(), steps)?;
    if let Some(cap) = opts.memory_cap {
        if cap < steps {
            warn!("memory truncated to {cap} past states over a {steps}-step run");
        }
        sim.set_memory_cap(Some(cap));
    }
    let inputs: Vec<DVector<f64>> = (0..steps).map(|k| input_or_zero(u, k, model.m())).collect();
    for k in 0..steps {
        sim.step(&inputs[k], &noise[k])?;
    }
    let mut t = Trajectory::new(sim.history, inputs)?;
    if !matches!(w, Noise::Zero) {
        t.noises = Some(noise);
    }
    if let Some(dt) = opts.dt {
        t.dt = dt;
    }
    Ok(t)
}

/// `G_0 = I`, `G_k = sum_{j=0}^{k-1} A_j G_{k-1-j}`, so that the free response
/// is `x[k] = G_k x[0]`.
pub fn transition_matrices(model: &FosModel, steps: usize) -> Vec<DMatrix<f64>> {
    let n = model.n();
    let aj = aj_series(model, steps.max(1));
    let mut g: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    for k in 1..=steps {
        let mut gk = &aj[0] * &g[k - 1];
        for j in 1..k {
            // A_j is diagonal for j >= 1
            let d = aj[j].diagonal();
            let prev = &g[k - 1 - j];
            for r in 0..n {
                let s = d[r];
                if s != 0.0 {
                    for c in 0..n {
                        gk[(r, c)] += s * prev[(r, c)];
                    }
                }
            }
        }
        g.push(gk);
    }
    g
}

/// Runs the lift `x~[k+1] = Ã x~[k] + B̃ u[k] + G̃ w[k]` and returns every
/// lifted state `x~[0..=K]`.
pub fn simulate_lifted(
    aug: &AugmentedModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    w: &Noise,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let start = if x0.len() == aug.n {
        aug.lift_state(x0)
    } else if x0.len() == aug.dim() {
        x0.clone()
    } else {
        return Err(Error::Dimension(format!(
            "initial state of length {}, expected {} or {}",
            x0.len(),
            aug.n,
            aug.dim()
        )));
    };
    check_inputs(u, aug.m, steps)?;
    let noise = w.realize(steps, aug.g.ncols())?;
    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(start);
    for k in 0..steps {
        let mut next = &aug.a * &xs[k] + &aug.g * &noise[k];
        if aug.m > 0 {
            next += &aug.b * input_or_zero(u, k, aug.m);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        xs.push(next);
    }
    Ok(xs)
}

/// Lift simulation reported on the base state, with `y[k] = C̃_k x~[k]`.
pub fn simulate_augmented(
    aug: &AugmentedModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    w: &Noise,
    steps: usize,
) -> Result<Trajectory> {
    let lifted = simulate_lifted(aug, x0, u, w, steps)?;
    let outputs = lifted
        .iter()
        .enumerate()
        .map(|(k, x)| aug.output_at(k) * x)
        .collect();
    let states = lifted.iter().map(|x| aug.base_state(x)).collect();
    let inputs = (0..steps).map(|k| input_or_zero(u, k, aug.m)).collect();
    let mut t = Trajectory::new(states, inputs)?;
    t.outputs = Some(outputs);
    Ok(t)
}

/// Full-memory simulation of a network in explicit form, with outputs `C_k x[k]`.
pub fn simulate_network(
    net: &MultiTermNetwork,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    w: &Noise,
    steps: usize,
) -> Result<Trajectory> {
    if x0.len() != net.n() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), net.n())));
    }
    check_inputs(u, net.m(), steps)?;
    let noise = w.realize(steps, net.p())?;
    let series = network_series(net, steps + 1)?;
    let inputs: Vec<DVector<f64>> = (0..steps).map(|k| input_or_zero(u, k, net.m())).collect();
    let mut xs = vec![x0.clone()];
    for k in 0..steps {
        let mut next = DVector::zeros(net.n());
        for j in 1..=k + 1 {
            next += &series.state[j] * &xs[k + 1 - j];
        }
        for j in 0..=k {
            if net.m() > 0 {
                next += &series.input[j] * &inputs[k - j];
            }
            if net.p() > 0 {
                next += &series.disturbance[j] * &noise[k - j];
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        xs.push(next);
    }
    let outputs = xs.iter().enumerate().map(|(k, x)| net.output().at(k) * x).collect();
    let mut t = Trajectory::new(xs, inputs)?;
    t.outputs = Some(outputs);
    if !matches!(w, Noise::Zero) {
        t.noises = Some(noise);
    }
    Ok(t)
}
