//! C ABI for `lfns`.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`*_solve` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`LfnsStatus`]; on failure the message is available from
//! [`lfns_last_error_message`] on the same thread. Matrices are exchanged as
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lfns::finite_horizon::{backward_riccati, discounted_backward_riccati, optimal_cost, FiniteHorizonSolution};
use lfns::infinite_horizon::{check_stabilizability, solve_stationary_riccati, stationary_cost, StationarySolution};
use lfns::model::{assemble_compact, CompactModel, CostSpec, LfnsModel, ModelSpec};
use lfns::nalgebra::DMatrix;
use lfns::policy::StructuredPolicy;
use lfns::simulation::{monte_carlo, SimulationConfig};
use lfns::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfnsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    DimensionMismatch = 4,
    BufferTooSmall = 5,
    Divergence = 6,
    NotConverged = 7,
    NumericalFailure = 8,
    Io = 9,
    Parse = 10,
    Panic = 11,
}

/// Stabilizability outcome of a stationary solution.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LfnsVerdict {
    /// 1 when the Riccati solution is positive definite and the discounted
    /// inequality holds, else 0.
    pub stabilizable: i32,
    pub closed_loop_stable: i32,
    pub spectral_radius: f64,
    pub inequality_margin: f64,
    pub min_eigenvalue_p: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LfnsMonteCarlo {
    pub mean_cost: f64,
    pub standard_error: f64,
    pub diverged_trials: u64,
}

pub struct LfnsModelHandle {
    model: LfnsModel,
    cost: CostSpec,
    compact: CompactModel,
}

pub struct LfnsStationaryHandle {
    solution: StationarySolution,
}

pub struct LfnsFiniteHandle {
    solution: FiniteHorizonSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LfnsStatus {
    match err {
        Error::DimensionMismatch { .. } => LfnsStatus::DimensionMismatch,
        Error::InvalidModel(_) => LfnsStatus::InvalidModel,
        Error::InvalidArgument(_) => LfnsStatus::InvalidArgument,
        Error::Divergence { .. } => LfnsStatus::Divergence,
        Error::NotConverged { .. } => LfnsStatus::NotConverged,
        Error::NotPositiveDefinite { .. } | Error::NotPositiveSemidefinite { .. } | Error::NonFinite { .. } => {
            LfnsStatus::NumericalFailure
        }
        Error::Io(_) => LfnsStatus::Io,
        Error::Json(_) => LfnsStatus::Parse,
    }
}

enum Failure {
    Status(LfnsStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(LfnsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LfnsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfnsStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            LfnsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(LfnsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies `m` row-major into `buf[..len]`.
unsafe fn write_matrix(m: &DMatrix<f64>, buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    let need = m.nrows() * m.ncols();
    if len < need {
        return Err(Failure::Status(
            LfnsStatus::BufferTooSmall,
            format!("buffer holds {len} values, {need} required"),
        ));
    }
    let out = std::slice::from_raw_parts_mut(buf, need);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i * m.ncols() + j] = m[(i, j)];
        }
    }
    Ok(())
}

fn into_handle(spec: ModelSpec) -> Result<LfnsModelHandle, Failure> {
    let (model, cost) = spec.validated()?;
    let compact = assemble_compact(&model)?;
    Ok(LfnsModelHandle { model, cost, compact })
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn lfns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn lfns_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a builtin model name or a JSON spec file path.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfns_model_load(source: *const c_char, out: *mut *mut LfnsModelHandle) -> LfnsStatus {
    guard(|| {
        let source = c_str(source, "source")?;
        let handle = into_handle(ModelSpec::resolve(source)?)?;
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Parses a JSON model spec held in memory.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfns_model_from_json(json: *const c_char, out: *mut *mut LfnsModelHandle) -> LfnsStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let handle = into_handle(ModelSpec::from_json(text)?)?;
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lfns_model_free(model: *mut LfnsModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Per-agent state dimension and input dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lfns_model_dims(
    model: *const LfnsModelHandle,
    n: *mut usize,
    m1: *mut usize,
    m2: *mut usize,
) -> LfnsStatus {
    guard(|| {
        let h = deref(model, "model")?;
        write_out(n, h.model.n, "n")?;
        write_out(m1, h.model.m1, "m1")?;
        write_out(m2, h.model.m2, "m2")
    })
}

/// Solves the discounted stationary Riccati equation.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_solve(
    model: *const LfnsModelHandle,
    out: *mut *mut LfnsStationaryHandle,
) -> LfnsStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let solution = solve_stationary_riccati(&h.compact, &h.cost)?;
        write_out(out, Box::into_raw(Box::new(LfnsStationaryHandle { solution })), "out")
    })
}

/// # Safety
/// `solution` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_free(solution: *mut LfnsStationaryHandle) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Gain `H` (`(m1+m2) × 2n`), row-major; control is `U = −H·(x0, x̂1 or x1)`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_gain(solution: *const LfnsStationaryHandle, buf: *mut f64, len: usize) -> LfnsStatus {
    guard(|| write_matrix(&deref(solution, "solution")?.solution.h, buf, len))
}

/// Riccati solution `P` (`2n × 2n`), row-major.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_riccati(
    solution: *const LfnsStationaryHandle,
    buf: *mut f64,
    len: usize,
) -> LfnsStatus {
    guard(|| write_matrix(&deref(solution, "solution")?.solution.p, buf, len))
}

/// `E[X(0)ᵀPX(0)] + γ/(1−γ)·Tr(Σ_W·P)`.
///
/// # Safety
/// Handles must be live and `cost` valid.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_cost(
    solution: *const LfnsStationaryHandle,
    model: *const LfnsModelHandle,
    cost: *mut f64,
) -> LfnsStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        let h = deref(model, "model")?;
        write_out(cost, stationary_cost(&s.solution, &h.model)?, "cost")
    })
}

/// # Safety
/// Handles must be live and `verdict` valid.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_verdict(
    solution: *const LfnsStationaryHandle,
    model: *const LfnsModelHandle,
    verdict: *mut LfnsVerdict,
) -> LfnsStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        let h = deref(model, "model")?;
        let v = check_stabilizability(&s.solution, &h.cost, &h.compact);
        let out = LfnsVerdict {
            stabilizable: v.is_stabilizable().into(),
            closed_loop_stable: v.closed_loop_stable.into(),
            spectral_radius: v.spectral_radius,
            inequality_margin: v.inequality_margin,
            min_eigenvalue_p: v.min_eigenvalue_p,
        };
        write_out(verdict, out, "verdict")
    })
}

/// Monte Carlo of the stationary policy over `steps` with discounted cost.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lfns_stationary_monte_carlo(
    solution: *const LfnsStationaryHandle,
    model: *const LfnsModelHandle,
    steps: usize,
    trials: u64,
    seed: u64,
    out: *mut LfnsMonteCarlo,
) -> LfnsStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        let h = deref(model, "model")?;
        let policy = StructuredPolicy::from_stationary(&s.solution);
        let summary = monte_carlo(&h.model, &h.cost, &policy, &SimulationConfig::new(steps, seed), trials, true)?;
        let result = LfnsMonteCarlo {
            mean_cost: summary.mean_cost,
            standard_error: summary.standard_error,
            diverged_trials: summary.diverged_trials,
        };
        write_out(out, result, "out")
    })
}

/// Backward Riccati recursion over stages `0..=horizon`. A nonzero
/// `discounted` uses the spec's discount factor and a zero terminal weight.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lfns_finite_solve(
    model: *const LfnsModelHandle,
    horizon: usize,
    discounted: i32,
    out: *mut *mut LfnsFiniteHandle,
) -> LfnsStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let solution = if discounted != 0 {
            discounted_backward_riccati(&h.compact, &h.cost, horizon)?
        } else {
            backward_riccati(&h.compact, &h.cost, horizon)?
        };
        write_out(out, Box::into_raw(Box::new(LfnsFiniteHandle { solution })), "out")
    })
}

/// # Safety
/// `solution` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lfns_finite_free(solution: *mut LfnsFiniteHandle) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Gain at step `k` (`(m1+m2) × 2n`), row-major.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lfns_finite_gain(
    solution: *const LfnsFiniteHandle,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> LfnsStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        let gain = s.solution.k_seq.get(k).ok_or_else(|| {
            Failure::Status(
                LfnsStatus::InvalidArgument,
                format!("step {k} beyond horizon {}", s.solution.horizon),
            )
        })?;
        write_matrix(gain, buf, len)
    })
}

/// Analytic optimal cost of the finite-horizon problem.
///
/// # Safety
/// Handles must be live and `cost` valid.
#[no_mangle]
pub unsafe extern "C" fn lfns_finite_cost(
    solution: *const LfnsFiniteHandle,
    model: *const LfnsModelHandle,
    cost: *mut f64,
) -> LfnsStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        let h = deref(model, "model")?;
        write_out(cost, optimal_cost(&s.solution, &h.model)?, "cost")
    })
}
