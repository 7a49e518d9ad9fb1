//! C interface to the fracdyn toolkit.
//!
//! Matrices cross the boundary as row-major `double` buffers, vectors as
//! contiguous arrays. Every fallible call returns an [`FdStatus`]; the
//! message for the last failure on the calling thread is available from
//! [`fd_last_error`].

use fracdyn::analysis::{commensurate_stability, deadbeat_input, fopid_response, Verdict};
use fracdyn::estimate::{EstimatorConfig, MinEnergyFilter};
use fracdyn::fraccore::gl_weight;
use fracdyn::model::{augment_v, FosModel, MultiTermNetwork};
use fracdyn::simulate::{simulate_fos, Noise, Trajectory};
use fracdyn::sysid::{identify, Window};
use fracdyn::Error;
use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdVerdict {
    Stable = 0,
    Unstable = 1,
    Marginal = 2,
}

/// Single-term fractional-order model.
pub struct FdModel(FosModel);

/// Recursive minimum-energy estimator.
pub struct FdFilter {
    inner: MinEnergyFilter,
    n: usize,
    m: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FdStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            match e {
                Error::Parse(_) => FdStatus::Parse,
                e if e.is_numerical() => FdStatus::Numerical,
                _ => FdStatus::InvalidArgument,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            FdStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const FdModel) -> Result<&'a FosModel, Fail> {
    m.as_ref().map(|m| &m.0).ok_or(Fail::Null("model"))
}

fn chunks(data: &[f64], width: usize) -> Vec<DVector<f64>> {
    if width == 0 {
        return Vec::new();
    }
    data.chunks(width).map(DVector::from_column_slice).collect()
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i * m.ncols() + j] = m[(i, j)];
        }
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Grünwald-Letnikov weight `c_j(alpha)`.
#[no_mangle]
pub extern "C" fn fd_gl_weight(alpha: f64, j: usize) -> f64 {
    gl_weight(alpha, j)
}

/// Builds a model from orders, `A` (n x n) and `B` (n x m) with identity
/// noise gain.
///
/// # Safety
/// `alpha` holds `n` values, `a` holds `n*n`, `b` holds `n*m`; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fd_model_new(
    n: usize,
    m: usize,
    alpha: *const f64,
    a: *const f64,
    b: *const f64,
    out: *mut *mut FdModel,
) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let alpha = slice(alpha, n, "alpha")?.to_vec();
        let a = DMatrix::from_row_slice(n, n, slice(a, n * n, "a")?);
        let b = DMatrix::from_row_slice(n, m, slice(b, n * m, "b")?);
        let model = FosModel::with_identity_noise(alpha, a, b)?;
        *out = Box::into_raw(Box::new(FdModel(model)));
        Ok(())
    })
}

/// Parses a model JSON document.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fd_model_from_json(json: *const c_char, out: *mut *mut FdModel) -> FdStatus {
    guard(|| {
        if json.is_null() {
            return Err(Fail::Null("json"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Error::Parse(e.to_string()))?;
        *out = Box::into_raw(Box::new(FdModel(FosModel::from_json(text)?)));
        Ok(())
    })
}

/// # Safety
/// `model` was returned by this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fd_model_free(model: *mut FdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State and input dimensions.
///
/// # Safety
/// `model` is a live handle; `n` and `m` are writable.
#[no_mangle]
pub unsafe extern "C" fn fd_model_dims(model: *const FdModel, n: *mut usize, m: *mut usize) -> FdStatus {
    guard(|| {
        let model = model_ref(model)?;
        if n.is_null() || m.is_null() {
            return Err(Fail::Null("dims"));
        }
        *n = model.n();
        *m = model.m();
        Ok(())
    })
}

/// Simulates `steps` steps and writes `x[0..=steps]` row by row into
/// `states` (`(steps+1)*n` values). Noise is Gaussian with the given seed
/// when `sigma > 0`, otherwise absent.
///
/// # Safety
/// `x0` holds `n` values, `u` holds `steps*m`, `states` holds `(steps+1)*n`.
#[no_mangle]
pub unsafe extern "C" fn fd_simulate(
    model: *const FdModel,
    x0: *const f64,
    u: *const f64,
    steps: usize,
    seed: u64,
    sigma: f64,
    states: *mut f64,
) -> FdStatus {
    guard(|| {
        let model = model_ref(model)?;
        let (n, m) = (model.n(), model.m());
        let x0 = DVector::from_column_slice(slice(x0, n, "x0")?);
        let u = chunks(slice(u, steps * m, "u")?, m);
        let out = slice_mut(states, (steps + 1) * n, "states")?;
        let noise = if sigma > 0.0 { Noise::Gaussian { seed, sigma } } else { Noise::Zero };
        let t = simulate_fos(model, &x0, &u, &noise, steps)?;
        for (k, x) in t.states.iter().enumerate() {
            out[k * n..(k + 1) * n].copy_from_slice(x.as_slice());
        }
        Ok(())
    })
}

/// Commensurate stability verdict and the smallest margin
/// `|arg lambda| - alpha*pi/2`.
///
/// # Safety
/// `model` is a live handle; `verdict` and `min_margin` are writable.
#[no_mangle]
pub unsafe extern "C" fn fd_stability(
    model: *const FdModel,
    verdict: *mut FdVerdict,
    min_margin: *mut f64,
) -> FdStatus {
    guard(|| {
        let model = model_ref(model)?;
        if verdict.is_null() || min_margin.is_null() {
            return Err(Fail::Null("outputs"));
        }
        if !model.is_commensurate() {
            return Err(Error::Domain("orders are not commensurate".into()).into());
        }
        let report = commensurate_stability(model.a(), model.alpha()[0])?;
        *verdict = match report.verdict {
            Verdict::Stable => FdVerdict::Stable,
            Verdict::Unstable => FdVerdict::Unstable,
            Verdict::Marginal => FdVerdict::Marginal,
        };
        *min_margin = report.margins.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(())
    })
}

/// Input sequence that steers `x0` to the origin in `horizon` steps, written
/// row by row into `u` (`horizon*m` values).
///
/// # Safety
/// `x0` holds `n` values and `u` holds `horizon*m`.
#[no_mangle]
pub unsafe extern "C" fn fd_deadbeat_input(
    model: *const FdModel,
    x0: *const f64,
    horizon: usize,
    u: *mut f64,
) -> FdStatus {
    guard(|| {
        let model = model_ref(model)?;
        let (n, m) = (model.n(), model.m());
        let x0 = DVector::from_column_slice(slice(x0, n, "x0")?);
        let out = slice_mut(u, horizon * m, "u")?;
        let seq = deadbeat_input(model, model.b(), &x0, horizon)?;
        for (k, v) in seq.iter().enumerate() {
            out[k * m..(k + 1) * m].copy_from_slice(v.as_slice());
        }
        Ok(())
    })
}

/// Identifies orders and the coupling matrix from an input-free state
/// record of `steps+1` rows of width `n`, fitting over the first
/// `window` transitions.
///
/// # Safety
/// `states` holds `(steps+1)*n` values, `alpha` holds `n`, `a` holds `n*n`.
#[no_mangle]
pub unsafe extern "C" fn fd_identify(
    states: *const f64,
    n: usize,
    steps: usize,
    depth: usize,
    epsilon: f64,
    window: usize,
    alpha: *mut f64,
    a: *mut f64,
) -> FdStatus {
    guard(|| {
        if n == 0 {
            return Err(Error::Dimension("n must be positive".into()).into());
        }
        let xs = chunks(slice(states, (steps + 1) * n, "states")?, n);
        let alpha = slice_mut(alpha, n, "alpha")?;
        let a = slice_mut(a, n * n, "a")?;
        let traj = Trajectory::new(xs, vec![DVector::zeros(0); steps])?;
        let res = identify(&traj, depth, epsilon, Window::new(0, window))?;
        alpha.copy_from_slice(&res.alpha_hat);
        write_row_major(&res.a_hat, a);
        Ok(())
    })
}

/// Estimator on the depth-`v` lift of `model` with full-state measurement
/// and isotropic weights `q`, `r`, `p0`.
///
/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fd_filter_new(
    model: *const FdModel,
    v: usize,
    q: f64,
    r: f64,
    p0: f64,
    out: *mut *mut FdFilter,
) -> FdStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let n = model.n();
        let net = MultiTermNetwork::from_fos(model, DMatrix::identity(n, n))?;
        let aug = augment_v(&net, v)?;
        let cfg = EstimatorConfig::isotropic(&aug, q, r, p0);
        let inner = MinEnergyFilter::new(aug, cfg)?;
        *out = Box::into_raw(Box::new(FdFilter { inner, n, m: model.m() }));
        Ok(())
    })
}

/// Consumes input `u` (m values) and measurement `y` (n values) and writes
/// the current base-state estimate (n values).
///
/// # Safety
/// `filter` is a live handle and the buffers have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_filter_step(
    filter: *mut FdFilter,
    u: *const f64,
    y: *const f64,
    xhat: *mut f64,
) -> FdStatus {
    guard(|| {
        let f = filter.as_mut().ok_or(Fail::Null("filter"))?;
        let u = DVector::from_column_slice(slice(u, f.m, "u")?);
        let y = DVector::from_column_slice(slice(y, f.n, "y")?);
        let out = slice_mut(xhat, f.n, "xhat")?;
        f.inner.step(&u, &y)?;
        out.copy_from_slice(f.inner.estimate().as_slice());
        Ok(())
    })
}

/// # Safety
/// `filter` was returned by this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fd_filter_free(filter: *mut FdFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Frequency response of `kp + ki s^-lambda + kd s^mu` at `len` angular
/// frequencies, written as magnitude in dB and phase in degrees.
///
/// # Safety
/// `omegas`, `mag_db` and `phase_deg` hold `len` values each.
#[no_mangle]
pub unsafe extern "C" fn fd_fopid_response(
    kp: f64,
    ki: f64,
    kd: f64,
    lambda: f64,
    mu: f64,
    omegas: *const f64,
    len: usize,
    mag_db: *mut f64,
    phase_deg: *mut f64,
) -> FdStatus {
    guard(|| {
        let w = slice(omegas, len, "omegas")?;
        let mag = slice_mut(mag_db, len, "mag_db")?;
        let phase = slice_mut(phase_deg, len, "phase_deg")?;
        for (i, p) in fopid_response(kp, ki, kd, lambda, mu, w)?.iter().enumerate() {
            mag[i] = p.mag_db;
            phase[i] = p.phase_deg;
        }
        Ok(())
    })
}
