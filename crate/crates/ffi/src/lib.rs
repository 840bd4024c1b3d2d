//! C ABI for `pivotsim`.
//!
//! Objects are opaque handles created by `pivotsim_*` constructors and released with the matching
//! `*_free` function. Every fallible call returns a [`PivotsimStatus`]; on failure the message is
//! kept per thread and can be fetched with [`pivotsim_last_error_message`]. Array arguments are
//! `(pointer, length)` pairs and lengths are checked against the object dimensions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pivotsim::simulate::{self, Scheme};
use pivotsim::{
    linearize, models, Error, LiftedSystem, NamedModel, PivotState, PolyOde, SimConfig,
    SwitchPolicy, Trajectory,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PivotsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Parse = 3,
    Resource = 4,
    Consistency = 5,
    Io = 6,
    BufferSize = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PivotsimMethod {
    Carleman = 0,
    Ps = 1,
    Psc = 2,
}

impl From<PivotsimMethod> for linearize::Method {
    fn from(m: PivotsimMethod) -> Self {
        match m {
            PivotsimMethod::Carleman => linearize::Method::Carleman,
            PivotsimMethod::Ps => linearize::Method::Ps,
            PivotsimMethod::Psc => linearize::Method::Psc,
        }
    }
}

/// Integration settings; obtain defaults from [`pivotsim_sim_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PivotsimSimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub divergence_threshold: f64,
    pub readout_noise: f64,
    pub rng_seed: u64,
    pub output_stride: usize,
    pub keep_higher_blocks: bool,
}

impl From<PivotsimSimConfig> for SimConfig {
    fn from(c: PivotsimSimConfig) -> Self {
        SimConfig {
            dt: c.dt,
            t_end: c.t_end,
            divergence_threshold: c.divergence_threshold,
            readout_noise: c.readout_noise,
            rng_seed: c.rng_seed,
            output_stride: c.output_stride,
            keep_higher_blocks: c.keep_higher_blocks,
        }
    }
}

/// A polynomial vector field with its default initial state.
pub struct PivotsimModel {
    inner: NamedModel,
}

/// A lifted linear system built from a model.
pub struct PivotsimSystem {
    inner: LiftedSystem,
}

/// A recorded trajectory.
pub struct PivotsimTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

#[derive(Debug)]
enum Failure {
    Null(&'static str),
    Buffer(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> PivotsimStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let (status, msg) = match outcome {
        Ok(Ok(())) => return PivotsimStatus::Ok,
        Ok(Err(Failure::Null(what))) => (PivotsimStatus::NullPointer, format!("{what} is null")),
        Ok(Err(Failure::Buffer(msg))) => (PivotsimStatus::BufferSize, msg),
        Ok(Err(Failure::Lib(e))) => {
            let status = match &e {
                Error::Input(_) => PivotsimStatus::InvalidInput,
                Error::Parse { .. } => PivotsimStatus::Parse,
                Error::Resource(_) => PivotsimStatus::Resource,
                Error::Consistency(_) => PivotsimStatus::Consistency,
                Error::Io(_) => PivotsimStatus::Io,
            };
            (status, e.to_string())
        }
        Err(_) => (PivotsimStatus::Panic, "internal panic".to_string()),
    };
    set_error(msg);
    status
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, out_len: usize) -> FfiResult {
    if out_len != values.len() {
        return Err(Failure::Buffer(format!(
            "output buffer holds {out_len} values, {} required",
            values.len()
        )));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Input(format!("{what} is not valid UTF-8"))))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to
/// `len`) and returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn pivotsim_sim_config_default() -> PivotsimSimConfig {
    let c = SimConfig::default();
    PivotsimSimConfig {
        dt: c.dt,
        t_end: c.t_end,
        divergence_threshold: c.divergence_threshold,
        readout_noise: c.readout_noise,
        rng_seed: c.rng_seed,
        output_stride: c.output_stride,
        keep_higher_blocks: c.keep_higher_blocks,
    }
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_logistic(out: *mut *mut PivotsimModel) -> PivotsimStatus {
    guard(|| {
        store(
            out,
            PivotsimModel {
                inner: models::build_logistic(),
            },
        )
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_kpp(
    n: usize,
    out: *mut *mut PivotsimModel,
) -> PivotsimStatus {
    guard(|| {
        store(
            out,
            PivotsimModel {
                inner: models::build_kpp(n)?,
            },
        )
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_phase_field(
    n: usize,
    beta: f64,
    out: *mut *mut PivotsimModel,
) -> PivotsimStatus {
    guard(|| {
        store(
            out,
            PivotsimModel {
                inner: models::build_phase_field(n, beta)?,
            },
        )
    })
}

/// Parses a JSON model file. The model has no default initial state.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_from_json(
    json: *const c_char,
    out: *mut *mut PivotsimModel,
) -> PivotsimStatus {
    guard(|| {
        let ode = PolyOde::from_json(c_str(json, "json")?)?;
        store(
            out,
            PivotsimModel {
                inner: NamedModel {
                    label: "custom".into(),
                    ode,
                    default_x0: Vec::new(),
                    divergence_bound: SimConfig::default().divergence_threshold,
                },
            },
        )
    })
}

/// State dimension `n`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_dim(model: *const PivotsimModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.ode.n())
}

/// Divergence threshold suited to the model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_divergence_bound(model: *const PivotsimModel) -> f64 {
    model
        .as_ref()
        .map_or(f64::NAN, |m| m.inner.divergence_bound)
}

/// Copies the default initial state (`n` values). Fails for models without one.
///
/// # Safety
/// `model` must be a live handle; `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_default_x0(
    model: *const PivotsimModel,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if m.inner.default_x0.is_empty() {
            return Err(Error::Input("model has no default initial state".into()).into());
        }
        copy_out(&m.inner.default_x0, out, out_len)
    })
}

/// Evaluates `f(x)`.
///
/// # Safety
/// `x` must point to `x_len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_eval_rhs(
    model: *const PivotsimModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let rhs = m.inner.ode.eval_rhs(slice(x, x_len, "x")?)?;
        copy_out(&rhs, out, out_len)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_model_free(model: *mut PivotsimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn pivot_or_default(
    pivot: *const f64,
    pivot_len: usize,
    fallback: PivotState,
) -> FfiResult<PivotState> {
    if pivot.is_null() {
        Ok(fallback)
    } else {
        Ok(PivotState::new(slice(pivot, pivot_len, "pivot")?.to_vec())?)
    }
}

/// Builds the lifted system of `model` at `pivot` (null means the origin).
///
/// # Safety
/// `pivot` must be null or point to `pivot_len` values; `out` a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_system_build(
    model: *const PivotsimModel,
    method: PivotsimMethod,
    order: usize,
    pivot: *const f64,
    pivot_len: usize,
    out: *mut *mut PivotsimSystem,
) -> PivotsimStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let s = pivot_or_default(pivot, pivot_len, PivotState::zeros(m.inner.ode.n()))?;
        let sys = linearize::build(&m.inner.ode, method.into(), order, &s)?;
        store(out, PivotsimSystem { inner: sys })
    })
}

/// Lifted dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_system_dim(sys: *const PivotsimSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.dim())
}

/// Matrix-free product `A y`.
///
/// # Safety
/// `y` must point to `y_len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_system_apply(
    sys: *const PivotsimSystem,
    y: *const f64,
    y_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| {
        let s = as_ref(sys, "system")?;
        let ay = s.inner.op.apply(slice(y, y_len, "y")?)?;
        copy_out(&ay, out, out_len)
    })
}

/// Embeds `x` as the lifted state of `sys`.
///
/// # Safety
/// `x` must point to `x_len` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_system_lift(
    sys: *const PivotsimSystem,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| {
        let s = as_ref(sys, "system")?;
        let y = linearize::lift_state(slice(x, x_len, "x")?, &s.inner)?;
        copy_out(&y, out, out_len)
    })
}

/// # Safety
/// `sys` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_system_free(sys: *mut PivotsimSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Integrates the lifted system with pivot switching.
///
/// `x0` null selects the model's default initial state. `pivot` null selects `x0` (the origin for
/// Carleman). `policy` is `never`, `at:t1,t2`, `every:T` or `drift:E`; `schedule` is
/// `t=target[;t=target...]`; at most one of them may be non-null and both null means no
/// switching. `cfg` null selects the defaults with the model's divergence bound. A run that
/// diverges still succeeds; query [`pivotsim_trajectory_divergence`].
///
/// # Safety
/// Pointers must be null or valid for the given lengths; strings NUL-terminated.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pivotsim_run(
    model: *const PivotsimModel,
    method: PivotsimMethod,
    order: usize,
    x0: *const f64,
    x0_len: usize,
    pivot: *const f64,
    pivot_len: usize,
    policy: *const c_char,
    schedule: *const c_char,
    cfg: *const PivotsimSimConfig,
    out: *mut *mut PivotsimTrajectory,
) -> PivotsimStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let x0 = initial_state(m, x0, x0_len)?;
        let method: linearize::Method = method.into();
        let fallback = if method == linearize::Method::Carleman {
            PivotState::zeros(m.inner.ode.n())
        } else {
            PivotState::new(x0.clone())?
        };
        let s0 = pivot_or_default(pivot, pivot_len, fallback)?;
        let policy = match (policy.is_null(), schedule.is_null()) {
            (true, true) => SwitchPolicy::Never,
            (false, true) => c_str(policy, "policy")?.parse()?,
            (true, false) => SwitchPolicy::parse_schedule(c_str(schedule, "schedule")?)?,
            (false, false) => {
                return Err(
                    Error::Input("policy and schedule are mutually exclusive".into()).into(),
                )
            }
        };
        let cfg = config(m, cfg);
        let traj = simulate::run_lifted(&m.inner.ode, method, order, &x0, &s0, &policy, &cfg)?;
        store(out, PivotsimTrajectory { inner: traj })
    })
}

/// Direct Euler (`rk4 = false`) or fourth-order Runge-Kutta solve of the nonlinear model.
///
/// # Safety
/// Pointers must be null or valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_reference_solve(
    model: *const PivotsimModel,
    x0: *const f64,
    x0_len: usize,
    cfg: *const PivotsimSimConfig,
    rk4: bool,
    out: *mut *mut PivotsimTrajectory,
) -> PivotsimStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let x0 = initial_state(m, x0, x0_len)?;
        let scheme = if rk4 { Scheme::Rk4 } else { Scheme::Euler };
        let traj = simulate::reference_solve(&m.inner.ode, &x0, &config(m, cfg), scheme)?;
        store(out, PivotsimTrajectory { inner: traj })
    })
}

unsafe fn initial_state(m: &PivotsimModel, x0: *const f64, x0_len: usize) -> FfiResult<Vec<f64>> {
    if x0.is_null() {
        if m.inner.default_x0.is_empty() {
            return Err(Error::Input("model has no default initial state; pass x0".into()).into());
        }
        Ok(m.inner.default_x0.clone())
    } else {
        Ok(slice(x0, x0_len, "x0")?.to_vec())
    }
}

unsafe fn config(m: &PivotsimModel, cfg: *const PivotsimSimConfig) -> SimConfig {
    match cfg.as_ref() {
        Some(c) => (*c).into(),
        None => SimConfig {
            divergence_threshold: m.inner.divergence_bound,
            ..SimConfig::default()
        },
    }
}

/// Number of recorded samples, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_len(traj: *const PivotsimTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.times.len())
}

/// State dimension of each sample, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_dim(traj: *const PivotsimTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.n)
}

/// Copies all sample times.
///
/// # Safety
/// `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_times(
    traj: *const PivotsimTrajectory,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| copy_out(&as_ref(traj, "trajectory")?.inner.times, out, out_len))
}

/// Copies sample `index`.
///
/// # Safety
/// `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_state(
    traj: *const PivotsimTrajectory,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| {
        let t = as_ref(traj, "trajectory")?;
        let state = t.inner.states.get(index).ok_or_else(|| {
            Error::Input(format!(
                "sample {index} out of range ({} samples)",
                t.inner.states.len()
            ))
        })?;
        copy_out(state, out, out_len)
    })
}

/// Returns whether the run diverged, storing the divergence time in `t` when it did.
///
/// # Safety
/// `traj` must be null or a live handle; `t` null or writable.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_divergence(
    traj: *const PivotsimTrajectory,
    t: *mut f64,
) -> bool {
    match traj.as_ref().and_then(|tr| tr.inner.divergence) {
        Some(time) => {
            if !t.is_null() {
                *t = time;
            }
            true
        }
        None => false,
    }
}

/// Number of pivot switches, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_switch_count(
    traj: *const PivotsimTrajectory,
) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.switch_events.len())
}

/// Copies the switch times.
///
/// # Safety
/// `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_switch_times(
    traj: *const PivotsimTrajectory,
    out: *mut f64,
    out_len: usize,
) -> PivotsimStatus {
    guard(|| {
        copy_out(
            &as_ref(traj, "trajectory")?.inner.switch_events,
            out,
            out_len,
        )
    })
}

/// Writes the trajectory CSV to `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_write_csv(
    traj: *const PivotsimTrajectory,
    path: *const c_char,
) -> PivotsimStatus {
    guard(|| {
        let t = as_ref(traj, "trajectory")?;
        let file = File::create(c_str(path, "path")?).map_err(Error::from)?;
        t.inner.write_csv(BufWriter::new(file))?;
        Ok(())
    })
}

/// Max-norm error over time, RMS error and time of the maximum between two trajectories.
///
/// # Safety
/// Handles must be live; output pointers writable or null.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_compare(
    a: *const PivotsimTrajectory,
    b: *const PivotsimTrajectory,
    max_abs: *mut f64,
    rms: *mut f64,
    t_at_max: *mut f64,
) -> PivotsimStatus {
    guard(|| {
        let r = simulate::compare(&as_ref(a, "a")?.inner, &as_ref(b, "b")?.inner)?;
        for (p, v) in [(max_abs, r.max_abs), (rms, r.rms), (t_at_max, r.t_at_max)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pivotsim_trajectory_free(traj: *mut PivotsimTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
