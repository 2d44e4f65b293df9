//! C ABI over the `taskfetch` solver and simulator.
//!
//! Every fallible call returns a [`TfStatus`] and writes its result through
//! an out-pointer. On failure a message is kept per thread and can be read
//! with [`tf_last_error_message`]. Handles are opaque and must be released
//! with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use taskfetch::closed_form::{cost_always_fetch_exact, cost_always_fetch_fluid, cost_never_fetch};
use taskfetch::policy::{rand_decision, FonCache};
use taskfetch::sim::build_policy;
use taskfetch::{
    run_batch, scenario_preset, solve_full, Action, CostParams, Error, Fsmc, Grid, PolicyKind,
    PolicyTable, SolveOptions, SystemState, TandemModel, ValueFunction,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidModel = 2,
    InvalidArgument = 3,
    NotConverged = 4,
    OutOfGrid = 5,
    Simulation = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfAction {
    NoFetch = 0,
    Fetch = 1,
}

/// Opaque tandem model.
pub struct TfModel {
    inner: TandemModel,
}

/// Opaque solved value function and optimal policy.
pub struct TfSolution {
    values: ValueFunction,
    policy: PolicyTable,
}

/// Monte Carlo estimates at one cost weight. Half-widths are 95% normal
/// intervals and are NaN when only one episode ran.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TfSummary {
    pub c: f64,
    pub mean_cost: f64,
    pub ci_cost: f64,
    pub b2_ave: f64,
    pub ci_b2: f64,
    pub d_ave: f64,
    pub ci_d: f64,
    pub episodes: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TfStatus {
    match e {
        Error::InvalidModel(_) | Error::ModelMismatch(_) => TfStatus::InvalidModel,
        Error::NotConverged { .. } => TfStatus::NotConverged,
        Error::OutOfGrid { .. } | Error::TerminalState { .. } => TfStatus::OutOfGrid,
        Error::SlotCapExceeded(_) => TfStatus::Simulation,
        Error::UnknownPreset(_) | Error::UnknownPolicy(_) | Error::InvalidParameter(_) => {
            TfStatus::InvalidArgument
        }
    }
}

struct Fail(TfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TfStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TfStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn boxed_model(inner: TandemModel, out: *mut *mut TfModel) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { out.write(Box::into_raw(Box::new(TfModel { inner }))) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Model with constant link success probability `s` and service rate `mu`.
///
/// # Safety
/// `out` must be null or valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn tf_model_new_reduced(s: f64, mu: f64, out: *mut *mut TfModel) -> TfStatus {
    guard(|| boxed_model(TandemModel::reduced(s, mu)?, out))
}

/// Two-state channel (`p11`, `p22`, success `s1`, `s2`) and two-state
/// processor (`q11`, `q22`, rates `mu1`, `mu2`).
///
/// # Safety
/// `out` must be null or valid for one pointer write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tf_model_new_two_state(
    p11: f64,
    p22: f64,
    s1: f64,
    s2: f64,
    q11: f64,
    q22: f64,
    mu1: f64,
    mu2: f64,
    out: *mut *mut TfModel,
) -> TfStatus {
    guard(|| {
        let model = TandemModel::new(
            Fsmc::two_state(p11, p22, s1, s2)?,
            Fsmc::two_state(q11, q22, mu1, mu2)?,
        )?;
        boxed_model(model, out)
    })
}

/// # Safety
/// `model` must be null or a handle from a `tf_model_new_*` call that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves the optimal fetching problem on the grid `b1 <= b1_max`,
/// `b1 + b2 <= b1_max + b2_max`. A `tol` of 0 or less and a `max_iters` of
/// 0 select the defaults.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn tf_solve(
    model: *const TfModel,
    c: f64,
    b1_max: u32,
    b2_max: u32,
    tol: f64,
    max_iters: u64,
    out: *mut *mut TfSolution,
) -> TfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut opts = SolveOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iters > 0 {
            opts.max_iters = max_iters as usize;
        }
        let (values, policy) =
            solve_full(&model.inner, CostParams::new(c)?, Grid::new(b1_max, b2_max), opts)?;
        out.write(Box::into_raw(Box::new(TfSolution { values, policy })));
        Ok(())
    })
}

fn solution<'a>(sol: *const TfSolution) -> Result<&'a TfSolution, Fail> {
    unsafe { sol.as_ref() }.ok_or_else(|| null("solution"))
}

/// Optimal expected cost-to-go from state `(b1, b2, j, m)`.
///
/// # Safety
/// `sol` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_solution_value(
    sol: *const TfSolution,
    b1: u32,
    b2: u32,
    j: usize,
    m: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| write(out, solution(sol)?.values.value(b1, b2, j, m)?, "out"))
}

/// Optimal action in state `(b1, b2, j, m)`.
///
/// # Safety
/// `sol` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_solution_action(
    sol: *const TfSolution,
    b1: u32,
    b2: u32,
    j: usize,
    m: usize,
    out: *mut TfAction,
) -> TfStatus {
    guard(|| {
        let action = solution(sol)?.policy.get(&SystemState::new(b1, b2, j, m))?;
        let a = match action {
            Action::Fetch => TfAction::Fetch,
            Action::NoFetch => TfAction::NoFetch,
        };
        write(out, a, "out")
    })
}

/// Sweeps used by value iteration.
///
/// # Safety
/// `sol` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_solution_iterations(sol: *const TfSolution, out: *mut u64) -> TfStatus {
    guard(|| {
        let stats = solution(sol)?.policy.stats().expect("solved tables carry stats");
        write(out, stats.iterations as u64, "out")
    })
}

/// # Safety
/// `sol` must be null or a handle from `tf_solve` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_solution_free(sol: *mut TfSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

fn check_reduced(s: f64, mu: f64, c: f64) -> Result<(), Fail> {
    TandemModel::reduced(s, mu)?;
    CostParams::new(c)?;
    Ok(())
}

/// Expected cost of never fetching until the terminal queue empties.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_cost_never_fetch(
    b1: u32,
    b2: u32,
    s: f64,
    mu: f64,
    c: f64,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        check_reduced(s, mu, c)?;
        write(out, cost_never_fetch(b1, b2, s, mu, c), "out")
    })
}

/// Exact expected cost of always fetching.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_cost_always_fetch(
    b1: u32,
    b2: u32,
    s: f64,
    mu: f64,
    c: f64,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        check_reduced(s, mu, c)?;
        write(out, cost_always_fetch_exact(b1, b2, s, mu, c), "out")
    })
}

/// Fluid approximation of the always-fetch cost.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_cost_always_fetch_fluid(
    b1: u32,
    b2: u32,
    s: f64,
    mu: f64,
    c: f64,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        check_reduced(s, mu, c)?;
        write(out, cost_always_fetch_fluid(b1, b2, s, mu, c), "out")
    })
}

/// Probability that the randomized cone rule holds in state `(b1, b2)`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_rand_hold_probability(
    b1: u32,
    b2: u32,
    s: f64,
    mu: f64,
    c: f64,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        check_reduced(s, mu, c)?;
        write(out, rand_decision(b1, b2, s, mu, c).hold_probability, "out")
    })
}

/// Runs `episodes` episodes of a named scenario preset under `policy`
/// (`opt`, `fon`, `rfon`, `always` or `never`) at cost weight `c`.
/// Episode `i` is seeded with `seed + i`.
///
/// # Safety
/// `preset` and `policy` must be NUL-terminated strings; `out` must be
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tf_simulate_preset(
    preset: *const c_char,
    policy: *const c_char,
    c: f64,
    episodes: u64,
    seed: u64,
    out: *mut TfSummary,
) -> TfStatus {
    guard(|| {
        let name = read_str(preset, "preset")?;
        let kind: PolicyKind = read_str(policy, "policy")?.parse()?;
        if out.is_null() {
            return Err(null("out"));
        }
        if episodes == 0 {
            return Err(Fail(TfStatus::InvalidArgument, "episodes must be positive".into()));
        }
        let mut scenario = scenario_preset(name)?;
        scenario.base_seed = seed;
        scenario.episodes = episodes as usize;
        CostParams::new(c)?;
        let cache = Arc::new(FonCache::new(SolveOptions::default()));
        let rule = build_policy(kind, &scenario, c, SolveOptions::default(), &cache)?;
        let batch = run_batch(&scenario, rule.as_ref(), c, scenario.episodes)?;
        let ci = |e: &taskfetch::sim::Estimate| e.ci95().unwrap_or(f64::NAN);
        write(
            out,
            TfSummary {
                c,
                mean_cost: batch.cost.mean,
                ci_cost: ci(&batch.cost),
                b2_ave: batch.b2.mean,
                ci_b2: ci(&batch.b2),
                d_ave: batch.delay.mean,
                ci_d: ci(&batch.delay),
                episodes,
            },
            "out",
        )
    })
}
