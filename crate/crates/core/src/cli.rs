//! Batch command-line front end. Every subcommand writes its outputs
//! atomically and leaves a `<out>.manifest.json` beside the main output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    commensurate_stability, controllability_gramian, fopid_response, frequency_response, lift_spectral_radius,
    log_frequencies, observability_matrices, write_bode_csv, TransferFunction,
};
use crate::error::{Error, Result};
use crate::estimate::{run_on_lift, EstimatorConfig, EstimatorConfigFile};
use crate::linalg::from_rows;
use crate::model::{augment_v, FosModel, MultiTermNetwork};
use crate::mpc::{run_closed_loop, uncontrolled_baseline, Scenario};
use crate::simulate::{gaussian_noise, simulate_fos_with, simulate_network, Noise, SimOptions, Trajectory};
use crate::sysid::{identify, one_step_mse, Window};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fracdyn", version, about = "Fractional-order dynamical systems toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a model or network file and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Stability, Gramians or frequency response of a model.
    Analyze(AnalyzeArgs),
    /// Identify orders and coupling from a trajectory CSV.
    Identify(IdentifyArgs),
    /// Minimum-energy state estimation from measured outputs.
    Estimate(EstimateArgs),
    /// Closed-loop predictive control scenario with an uncontrolled baseline.
    Mpc(MpcArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Main output file.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object of option values; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model or network JSON file.
    #[arg(long)]
    pub model: PathBuf,
    /// Number of steps K.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Initial state, comma separated (default zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// CSV with columns `u1..um`.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// Standard deviation of Gaussian process noise (used with --seed).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Standard deviation of Gaussian measurement noise on the outputs
    /// (a single-term model is measured in full).
    #[arg(long)]
    pub output_sigma: Option<f64>,
    /// Number of past states kept in the memory sum (default all).
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Trajectory CSV on which to report the one-step prediction MSE of the model.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Stability,
    Gramians,
    Bode,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: Analysis,
    #[command(flatten)]
    pub common: Common,
    /// Model JSON file (optional for `bode` with --fopid).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gramian horizon K.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Lift depth for the spectral radius of non-commensurate models.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Controller gains and exponents `kp,ki,kd,lambda,mu`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub fopid: Option<Vec<f64>>,
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Output and input channel `i,j` (1-based) for the model response.
    #[arg(long, value_delimiter = ',')]
    pub channel: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Memory depth p (default: the trajectory length).
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `offset,length` or `length`.
    #[arg(long, value_delimiter = ',')]
    pub window: Option<Vec<usize>>,
    /// Diagnostics CSV (default `<out>.diag.csv`).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Network JSON file (a model file is embedded with identity output).
    #[arg(long)]
    pub network: PathBuf,
    /// Trajectory CSV with `y` columns.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Estimator weights file with `Q`, `R`, `P0` and optional `xhat0`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Truncation depth v of the lift.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Summary JSON (default `<out>.summary.json`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MpcArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub control_horizon: Option<usize>,
    /// Input bounds `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Option<Vec<f64>>,
    /// Summary JSON (default `<out>.summary.json`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Provenance record written next to every main output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 of the canonical JSON of the effective options.
    pub config_digest: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Mpc(a) => cmd_mpc(a),
    }
}

/// Effective options: a flag wins over the config file entry of the same name.
struct Options {
    file: Map<String, Value>,
    used: BTreeMap<String, Value>,
}

impl Options {
    fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            None => Map::new(),
            Some(p) => match serde_json::from_str::<Value>(&read_text(p)?)? {
                Value::Object(m) => m,
                _ => return Err(Error::Parse(format!("{}: expected a JSON object", p.display()))),
            },
        };
        Ok(Options {
            file,
            used: BTreeMap::new(),
        })
    }

    fn get<T: DeserializeOwned + Serialize + Clone>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(v) => Some(
                    serde_json::from_value(v.clone()).map_err(|e| Error::invalid(key, e.to_string()))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.used.insert(key.to_string(), serde_json::to_value(v)?);
        }
        Ok(value)
    }

    fn note(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.used.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.used).expect("options serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::read_csv(std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?)
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn finish(
    subcommand: &str,
    common: &Common,
    opts: &Options,
    inputs: Vec<&Path>,
    outputs: Vec<(PathBuf, Vec<u8>)>,
    metrics: BTreeMap<String, f64>,
) -> Result<()> {
    for (path, bytes) in &outputs {
        write_atomic(path, bytes)?;
    }
    let mut inputs: Vec<String> = inputs.into_iter().map(path_str).collect();
    if let Some(c) = &common.config {
        inputs.push(path_str(c));
    }
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        inputs,
        outputs: outputs.iter().map(|(p, _)| path_str(p)).collect(),
        seed: opts.used.get("seed").and_then(Value::as_u64),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: opts.digest(),
        metrics,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&with_suffix(&common.out, ".manifest.json"), text.as_bytes())?;
    log::info!("{subcommand}: wrote {}", common.out.display());
    Ok(())
}

enum Plant {
    Fos(FosModel),
    Network(MultiTermNetwork),
}

fn read_plant(path: &Path) -> Result<Plant> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text)?;
    let is_network = value
        .as_object()
        .is_some_and(|o| o.contains_key("state_terms") || o.contains_key("C"));
    if is_network {
        Ok(Plant::Network(MultiTermNetwork::from_json(&text)?))
    } else {
        Ok(Plant::Fos(FosModel::from_json(&text)?))
    }
}

fn read_inputs(path: &Path) -> Result<Vec<DVector<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('u'))
        .map(|(c, _)| c)
        .collect();
    if cols.is_empty() {
        return Err(Error::Parse(format!("{}: no `u` columns", path.display())));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let fields: Vec<&str> = cols.iter().map(|&c| rec.get(c).unwrap_or("")).collect();
        if fields.iter().all(|s| s.is_empty()) {
            continue;
        }
        let vals = fields
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad number `{s}`", line + 2))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(DVector::from_vec(vals));
    }
    Ok(out)
}

fn initial_state(x0: Option<Vec<f64>>, n: usize) -> Result<DVector<f64>> {
    match x0 {
        None => Ok(DVector::zeros(n)),
        Some(v) if v.len() == n => Ok(DVector::from_vec(v)),
        Some(v) => Err(Error::Dimension(format!("x0 has length {}, expected {n}", v.len()))),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut opts = Options::load(a.common.config.as_deref())?;
    let steps = opts
        .get("steps", a.steps)?
        .ok_or_else(|| Error::invalid("steps", "required (flag or config)"))?;
    let seed = opts.get("seed", a.common.seed)?;
    let sigma = opts.get("sigma", a.sigma)?.unwrap_or(1.0);
    let output_sigma = opts.get("output_sigma", a.output_sigma)?;
    let depth = opts.get("depth", a.depth)?;
    let dt = opts.get("dt", a.dt)?;
    let x0 = opts.get("x0", a.x0.clone())?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be non-negative"));
    }
    let noise = match seed {
        Some(seed) => Noise::Gaussian { seed, sigma },
        None => Noise::Zero,
    };
    let u = match &a.inputs {
        Some(p) => read_inputs(p)?,
        None => Vec::new(),
    };
    let mut inputs = vec![a.model.as_path()];
    inputs.extend(a.inputs.as_deref());
    let mut metrics = BTreeMap::new();
    let mut traj = match read_plant(&a.model)? {
        Plant::Fos(model) => {
            let x0 = initial_state(x0, model.n())?;
            let sim = SimOptions { memory_cap: depth, dt };
            let t = simulate_fos_with(&model, &x0, &u, &noise, steps, &sim)?;
            if let Some(r) = &a.reference {
                let reference = read_trajectory(r)?;
                let mse = one_step_mse(&model, &reference, depth)?;
                println!("one_step_mse={mse:?}");
                metrics.insert("one_step_mse".to_string(), mse);
                inputs.push(r.as_path());
            }
            t
        }
        Plant::Network(net) => {
            if a.reference.is_some() {
                return Err(Error::invalid("reference", "one-step MSE needs a single-term model"));
            }
            let x0 = initial_state(x0, net.n())?;
            let mut t = simulate_network(&net, &x0, &u, &noise, steps)?;
            if let Some(dt) = dt {
                t.dt = dt;
            }
            t
        }
    };
    if output_sigma.is_some() && traj.outputs.is_none() {
        traj.outputs = Some(traj.states.clone());
    }
    if let (Some(s), Some(ys)) = (output_sigma, traj.outputs.as_mut()) {
        let q = ys.first().map_or(0, |y| y.len());
        let v = gaussian_noise(seed.unwrap_or(0).wrapping_add(1), ys.len(), q, s)?;
        for (y, e) in ys.iter_mut().zip(v) {
            *y += e;
        }
    }
    opts.note("model", path_str(&a.model))?;
    finish(
        "simulate",
        &a.common,
        &opts,
        inputs,
        vec![(a.common.out.clone(), traj.to_csv_string().into_bytes())],
        metrics,
    )
}

fn read_model(path: Option<&Path>) -> Result<FosModel> {
    let path = path.ok_or_else(|| Error::invalid("model", "required for this analysis"))?;
    FosModel::from_json(&read_text(path)?)
}

fn output_matrix(opts: &mut Options, n: usize) -> Result<DMatrix<f64>> {
    match opts.get::<Vec<Vec<f64>>>("C", None)? {
        Some(rows) => from_rows(&rows, n, "C"),
        None => Ok(DMatrix::identity(n, n)),
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let mut opts = Options::load(a.common.config.as_deref())?;
    opts.note("kind", a.kind)?;
    let mut inputs: Vec<&Path> = a.model.iter().map(PathBuf::as_path).collect();
    let bytes = match a.kind {
        Analysis::Stability => {
            let model = read_model(a.model.as_deref())?;
            let depth = opts.get("depth", a.depth)?.unwrap_or(50);
            let lift = lift_spectral_radius(&model, depth)?;
            let mut report = json!({
                "commensurate": model.is_commensurate(),
                "lift": {"depth": lift.depth, "spectral_radius": lift.spectral_radius, "label": lift.label},
            });
            if model.is_commensurate() && model.n() > 0 {
                let s = commensurate_stability(model.a(), model.alpha()[0])?;
                report["commensurate_test"] = serde_json::to_value(&s)?;
            }
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            text.into_bytes()
        }
        Analysis::Gramians => {
            let model = read_model(a.model.as_deref())?;
            let horizon = opts.get("horizon", a.horizon)?.unwrap_or(model.n().max(1));
            let c = output_matrix(&mut opts, model.n())?;
            let mut report = json!({});
            if model.m() > 0 {
                report["controllability"] = serde_json::to_value(controllability_gramian(&model, model.b(), horizon)?)?;
            }
            let obs = observability_matrices(&model, model.b(), &c, horizon)?;
            report["observability"] = serde_json::to_value(obs.report(horizon))?;
            report["C"] = matrix_json(&c);
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            text.into_bytes()
        }
        Analysis::Bode => {
            let lo = opts.get("omega_min", a.omega_min)?.unwrap_or(1e-2);
            let hi = opts.get("omega_max", a.omega_max)?.unwrap_or(1e2);
            let count = opts.get("points", a.points)?.unwrap_or(200);
            if !(lo > 0.0 && hi >= lo) || count == 0 {
                return Err(Error::invalid("omega_min", "need 0 < omega_min <= omega_max and points >= 1"));
            }
            let omegas = log_frequencies(lo, hi, count);
            let points = match opts.get("fopid", a.fopid.clone())? {
                Some(g) => {
                    if g.len() != 5 {
                        return Err(Error::invalid("fopid", "expected kp,ki,kd,lambda,mu"));
                    }
                    fopid_response(g[0], g[1], g[2], g[3], g[4], &omegas)?
                }
                None => {
                    let model = read_model(a.model.as_deref())?;
                    if !model.is_commensurate() {
                        return Err(Error::invalid("model", "frequency response needs a commensurate model"));
                    }
                    let ch = opts.get("channel", a.channel.clone())?.unwrap_or_else(|| vec![1, 1]);
                    let (n, m) = (model.n(), model.m());
                    if ch.len() != 2 || ch[0] == 0 || ch[0] > n || ch[1] == 0 || ch[1] > m {
                        return Err(Error::invalid("channel", format!("expected i,j with 1 <= i <= {n}, 1 <= j <= {m}")));
                    }
                    let c = output_matrix(&mut opts, n)?.rows(ch[0] - 1, 1).into_owned();
                    let b = model.b().columns(ch[1] - 1, 1).into_owned();
                    let tf = TransferFunction::state_space(model.a().clone(), b, c, DMatrix::zeros(1, 1), model.alpha()[0])?;
                    frequency_response(&tf, &omegas)?
                }
            };
            let mut buf = Vec::new();
            write_bode_csv(&points, &mut buf)?;
            buf
        }
    };
    if let Some(m) = &a.model {
        opts.note("model", path_str(m))?;
    }
    inputs.dedup();
    finish("analyze", &a.common, &opts, inputs, vec![(a.common.out.clone(), bytes)], BTreeMap::new())
}

pub fn cmd_identify(a: &IdentifyArgs) -> Result<()> {
    let mut opts = Options::load(a.common.config.as_deref())?;
    let traj = read_trajectory(&a.trajectory)?;
    let depth = opts.get("depth", a.depth)?.unwrap_or(traj.steps().max(1));
    let epsilon = opts.get("epsilon", a.epsilon)?.unwrap_or(1e-3);
    let window = match opts.get("window", a.window.clone())? {
        None => Window::default(),
        Some(w) if w.len() == 1 => Window::new(0, w[0]),
        Some(w) if w.len() == 2 => Window::new(w[0], w[1]),
        Some(_) => return Err(Error::invalid("window", "expected `offset,length` or `length`")),
    };
    opts.note("window_resolved", window)?;
    let result = identify(&traj, depth, epsilon, window)?;
    let model = result.model()?;
    let diag = a.diagnostics.clone().unwrap_or_else(|| with_suffix(&a.common.out, ".diag.csv"));
    let mut metrics = BTreeMap::new();
    metrics.insert("one_step_mse".to_string(), one_step_mse(&model, &traj, Some(depth))?);
    finish(
        "identify",
        &a.common,
        &opts,
        vec![&a.trajectory],
        vec![
            (a.common.out.clone(), model.to_json().into_bytes()),
            (diag, result.diagnostics_csv().into_bytes()),
        ],
        metrics,
    )
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let mut opts = Options::load(a.common.config.as_deref())?;
    let net = match read_plant(&a.network)? {
        Plant::Network(n) => n,
        Plant::Fos(m) => {
            let n = m.n();
            MultiTermNetwork::from_fos(&m, DMatrix::identity(n, n))?
        }
    };
    let v = opts.get("depth", a.depth)?.unwrap_or(10);
    let traj = read_trajectory(&a.trajectory)?;
    let aug = augment_v(&net, v)?;
    let config = match &a.weights {
        Some(p) => EstimatorConfigFile::from_json(&read_text(p)?)?.resolve(&aug)?,
        None => EstimatorConfig::isotropic(&aug, 1.0, 1.0, 1.0),
    };
    let run = run_on_lift(aug, &config, &traj)?;
    let mut summary = json!({
        "depth": v,
        "steps": run.estimates.len().saturating_sub(1),
    });
    let mut metrics = BTreeMap::new();
    if let (Some(t), Some(s)) = (run.terminal_error(), run.sup_error()) {
        summary["terminal_error"] = json!(t);
        summary["sup_error"] = json!(s);
        metrics.insert("terminal_error".to_string(), t);
        metrics.insert("sup_error".to_string(), s);
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    let summary_path = a.summary.clone().unwrap_or_else(|| with_suffix(&a.common.out, ".summary.json"));
    let mut inputs = vec![a.network.as_path(), a.trajectory.as_path()];
    inputs.extend(a.weights.as_deref());
    finish(
        "estimate",
        &a.common,
        &opts,
        inputs,
        vec![
            (a.common.out.clone(), run.to_csv(traj.dt).into_bytes()),
            (summary_path, text.into_bytes()),
        ],
        metrics,
    )
}

pub fn cmd_mpc(a: &MpcArgs) -> Result<()> {
    let mut opts = Options::load(a.common.config.as_deref())?;
    let mut scenario = Scenario::from_json(&read_text(&a.scenario)?)?;
    if let Some(s) = opts.get("seed", a.common.seed)? {
        scenario.seed = Some(s);
    }
    if let Some(k) = opts.get("steps", a.steps)? {
        scenario.steps = k;
    }
    if let Some(p) = opts.get("depth", a.depth)? {
        scenario.depth = p;
    }
    if let Some(p) = opts.get("horizon", a.horizon)? {
        scenario.horizon = p;
    }
    if let Some(m) = opts.get("control_horizon", a.control_horizon)? {
        scenario.control_horizon = m;
    }
    if let Some(b) = opts.get("bounds", a.bounds.clone())? {
        if b.len() != 2 {
            return Err(Error::invalid("bounds", "expected `lo,hi`"));
        }
        scenario.u_lo = Some(b[0]);
        scenario.u_hi = Some(b[1]);
    }
    opts.note("scenario", &scenario)?;
    if opts.used.get("seed").is_none() {
        opts.note("seed", scenario.seed.unwrap_or(0))?;
    }
    let model_path = a.scenario.parent().unwrap_or(Path::new("")).join(&scenario.model);
    let plant = FosModel::from_json(&read_text(&model_path)?)?;
    let problem = scenario.problem(&plant)?;
    let x0 = scenario.initial_state(&plant)?;
    let noise = scenario.noise();
    let run = run_closed_loop(&plant, &problem, &x0, scenario.steps, &noise)?;
    let (baseline, checksum) = uncontrolled_baseline(&plant, &x0, scenario.steps, &noise)?;
    debug_assert_eq!(checksum, run.noise_checksum);
    let controlled = run.energy();
    let uncontrolled = crate::mpc::state_energy(&baseline);
    let max_input = run.trajectory.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max);
    let summary = json!({
        "steps": scenario.steps,
        "solves": run.solves.len(),
        "controlled_energy": controlled,
        "baseline_energy": uncontrolled,
        "suppression_ratio": if controlled > 0.0 { json!(uncontrolled / controlled) } else { Value::Null },
        "max_abs_input": max_input,
        "max_kkt_residual": run.solves.iter().map(|s| s.kkt_residual).fold(0.0, f64::max),
        "noise_checksum": run.noise_checksum,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    let summary_path = a.summary.clone().unwrap_or_else(|| with_suffix(&a.common.out, ".summary.json"));
    let mut metrics = BTreeMap::new();
    metrics.insert("controlled_energy".to_string(), controlled);
    metrics.insert("baseline_energy".to_string(), uncontrolled);
    finish(
        "mpc",
        &a.common,
        &opts,
        vec![&a.scenario, &model_path],
        vec![
            (a.common.out.clone(), run.to_csv().into_bytes()),
            (summary_path, text.into_bytes()),
        ],
        metrics,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_flags() {
        let cli = Cli::try_parse_from([
            "fracdyn", "mpc", "--scenario", "s.json", "--out", "o.csv", "--bounds", "-5,5", "--horizon", "20",
        ])
        .unwrap();
        match cli.command {
            Command::Mpc(a) => {
                assert_eq!(a.bounds, Some(vec![-5.0, 5.0]));
                assert_eq!(a.horizon, Some(20));
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn usage_error_exit_code() {
        assert_eq!(run(["fracdyn", "simulate"]), EXIT_INVALID);
        assert_eq!(run(["fracdyn", "frobnicate"]), EXIT_INVALID);
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"steps": 5, "seed": 9}"#).unwrap();
        let mut o = Options::load(Some(&cfg)).unwrap();
        assert_eq!(o.get("steps", Some(7usize)).unwrap(), Some(7));
        assert_eq!(o.get::<u64>("seed", None).unwrap(), Some(9));
        assert_eq!(o.get::<f64>("sigma", None).unwrap(), None);
        let d1 = o.digest();
        o.note("extra", 1).unwrap();
        assert_ne!(d1, o.digest());
    }
}
