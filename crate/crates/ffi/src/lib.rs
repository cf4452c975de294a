//! C ABI for the extragrad solver.
//!
//! Problems and results are opaque handles created and destroyed through this
//! interface. Every fallible call returns an [`XgStatus`]; on failure a
//! message is available from [`xg_last_error`] on the same thread until the
//! next call into the library. Strings returned by the library are owned by
//! the caller and released with [`xg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use extragrad::cli::{constants_report, OutputFormat};
use extragrad::dcopf::to_problem_spec;
use extragrad::instance::{load_instance, parse_instance, Instance};
use extragrad::oracle::solve_centralized;
use extragrad::random::{random_instance, RandomParams};
use extragrad::solver::{StepSize, TraceRow};
use extragrad::{compute_constants, Error, ProblemSpec, SolverConfig, SolverOutput};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInstance = 3,
    Divergence = 4,
    Infeasible = 5,
    NoConvergence = 6,
    Io = 7,
    Panic = 8,
}

impl From<&Error> for XgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Divergence { .. } => XgStatus::Divergence,
            Error::Infeasible(_) => XgStatus::Infeasible,
            Error::NoConvergence(_) => XgStatus::NoConvergence,
            Error::Io(_) => XgStatus::Io,
            _ => XgStatus::InvalidInstance,
        }
    }
}

/// A validated problem instance.
pub struct XgProblem {
    spec: ProblemSpec,
}

/// The output of one solver run.
pub struct XgResult {
    out: SolverOutput,
}

/// Solver settings. Obtain defaults from [`xg_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct XgConfig {
    pub max_iters: u64,
    /// Fixed step size; zero selects the automatic step.
    pub step: f64,
    pub record_every: u64,
    /// Early-stop threshold on the combined residual; zero runs every iteration.
    pub tolerance: f64,
    pub seed: u64,
    pub random_init: bool,
    pub adaptive_halving: bool,
    pub parallel: bool,
}

/// One recorded row of the run trace.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct XgTraceRow {
    pub iter: u64,
    pub objective: f64,
    pub eq_residual: f64,
    pub ineq_residual: f64,
    pub shared_eq_residual: f64,
    pub shared_ineq_residual: f64,
    pub consensus_dual: f64,
    pub consensus_primal: f64,
    pub xt_disagreement: f64,
    pub gap_surrogate: f64,
}

impl From<&TraceRow> for XgTraceRow {
    fn from(r: &TraceRow) -> Self {
        Self {
            iter: r.iter as u64,
            objective: r.objective,
            eq_residual: r.eq_residual,
            ineq_residual: r.ineq_residual,
            shared_eq_residual: r.shared_eq_residual,
            shared_ineq_residual: r.shared_ineq_residual,
            consensus_dual: r.consensus_dual,
            consensus_primal: r.consensus_primal,
            xt_disagreement: r.xt_disagreement,
            gap_surrogate: r.gap_surrogate,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

struct Failure(XgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(XgStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: XgStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `body`, converting errors and panics into a status and a message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> XgStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => XgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in extragrad".into());
            set_error(msg);
            XgStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return fail(XgStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .or_else(|_| fail(XgStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(XgStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(XgStatus::NullPointer, "output pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn problem_from(instance: Instance, pin_slack: bool) -> Result<XgProblem, Failure> {
    let spec = match instance {
        Instance::Problem(spec) => spec,
        Instance::DcOpf(inst) => to_problem_spec(&inst, pin_slack)?,
    };
    Ok(XgProblem { spec })
}

/// Copies `src` into a caller buffer of capacity `len`, reporting the
/// required length through `needed` when it is not null.
unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize, needed: *mut usize) -> Result<(), Failure> {
    if !needed.is_null() {
        *needed = src.len();
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return fail(XgStatus::NullPointer, "output buffer is null");
    }
    if len < src.len() {
        return fail(
            XgStatus::InvalidArgument,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn xg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn xg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default solver settings.
#[no_mangle]
pub extern "C" fn xg_config_default() -> XgConfig {
    let d = SolverConfig::default();
    XgConfig {
        max_iters: d.max_iters as u64,
        step: 0.0,
        record_every: d.record_every as u64,
        tolerance: d.tolerance,
        seed: d.seed,
        random_init: d.random_init,
        adaptive_halving: d.adaptive_halving,
        parallel: d.parallel,
    }
}

/// Parses an instance document (JSON or TOML, generic or DC-OPF).
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_parse(
    text: *const c_char,
    pin_slack: bool,
    out: *mut *mut XgProblem,
) -> XgStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        let problem = problem_from(parse_instance(text)?, pin_slack)?;
        store(out, problem)
    })
}

/// Loads an instance file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_load(
    path: *const c_char,
    pin_slack: bool,
    out: *mut *mut XgProblem,
) -> XgStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let problem = problem_from(load_instance(Path::new(path))?, pin_slack)?;
        store(out, problem)
    })
}

/// Generates the seeded random instance used by `random_seed<N>`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_random(seed: u64, out: *mut *mut XgProblem) -> XgStatus {
    guard(|| {
        let spec = random_instance(seed, &RandomParams::default());
        store(out, XgProblem { spec })
    })
}

/// Destroys a problem. Null is ignored.
///
/// # Safety
/// `p` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_free(p: *mut XgProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_agent_count(p: *const XgProblem) -> usize {
    p.as_ref().map_or(0, |p| p.spec.agent_count())
}

/// Length of the stacked private vector, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_private_dim(p: *const XgProblem) -> usize {
    p.as_ref().map_or(0, |p| p.spec.private_dim())
}

/// Length of the shared vector, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_shared_dim(p: *const XgProblem) -> usize {
    p.as_ref().map_or(0, |p| p.spec.shared_dim())
}

/// Problem constants as `key=value` lines. Free with [`xg_string_free`].
///
/// # Safety
/// `p` must be a live problem handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xg_problem_constants(p: *const XgProblem, out: *mut *mut c_char) -> XgStatus {
    guard(|| {
        let p = deref(p, "problem")?;
        if out.is_null() {
            return fail(XgStatus::NullPointer, "output pointer is null");
        }
        let text = constants_report(&compute_constants(&p.spec)?).render(OutputFormat::Kv);
        *out = owned_string(text);
        Ok(())
    })
}

/// Solves with the centralized reference solver. Any of `objective`, `x`
/// and `xt` may be null; `x` and `xt` need capacities of at least the private
/// and shared dimensions.
///
/// # Safety
/// `p` must be a live problem handle; non-null buffers must be writable for
/// the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn xg_oracle_solve(
    p: *const XgProblem,
    objective: *mut f64,
    x: *mut f64,
    x_len: usize,
    xt: *mut f64,
    xt_len: usize,
) -> XgStatus {
    guard(|| {
        let p = deref(p, "problem")?;
        let sol = solve_centralized(&p.spec)?;
        if !objective.is_null() {
            *objective = sol.objective;
        }
        if !x.is_null() {
            copy_out(&sol.x_star, x, x_len, ptr::null_mut())?;
        }
        if !xt.is_null() {
            copy_out(&sol.xt_star, xt, xt_len, ptr::null_mut())?;
        }
        Ok(())
    })
}

/// Runs the decentralized solver. `config` may be null for defaults.
///
/// # Safety
/// `p` must be a live problem handle, `config` null or readable, and `out`
/// a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xg_solve(
    p: *const XgProblem,
    config: *const XgConfig,
    out: *mut *mut XgResult,
) -> XgStatus {
    guard(|| {
        let p = deref(p, "problem")?;
        let c = config.as_ref().copied().unwrap_or_else(|| xg_config_default());
        if !(c.step >= 0.0 && c.step.is_finite()) {
            return fail(XgStatus::InvalidArgument, format!("step must be zero or positive, got {}", c.step));
        }
        let config = SolverConfig {
            max_iters: c.max_iters as usize,
            step: if c.step == 0.0 { StepSize::Auto } else { StepSize::Fixed(c.step) },
            record_every: c.record_every as usize,
            tolerance: c.tolerance,
            seed: c.seed,
            random_init: c.random_init,
            adaptive_halving: c.adaptive_halving,
            parallel: c.parallel,
        };
        let result = extragrad::run(&p.spec, &config)?;
        store(out, XgResult { out: result })
    })
}

/// Destroys a result. Null is ignored.
///
/// # Safety
/// `r` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xg_result_free(r: *mut XgResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Iterations performed, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn xg_result_iterations(r: *const XgResult) -> u64 {
    r.as_ref().map_or(0, |r| r.out.iterations as u64)
}

/// Step size used, or NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn xg_result_step_size(r: *const XgResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.out.step_size)
}

/// Copies the averaged private vector. `needed` (if not null) receives its
/// length even when the buffer is too small.
///
/// # Safety
/// `r` must be a live result handle; `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn xg_result_x(
    r: *const XgResult,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> XgStatus {
    guard(|| copy_out(&deref(r, "result")?.out.averages.x, buf, len, needed))
}

/// Copies the agents' mean of the averaged shared vector.
///
/// # Safety
/// As for [`xg_result_x`].
#[no_mangle]
pub unsafe extern "C" fn xg_result_xt(
    r: *const XgResult,
    buf: *mut f64,
    len: usize,
    needed: *mut usize,
) -> XgStatus {
    guard(|| copy_out(&deref(r, "result")?.out.averages.xt_mean(), buf, len, needed))
}

/// Number of recorded trace rows, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn xg_result_trace_len(r: *const XgResult) -> usize {
    r.as_ref().map_or(0, |r| r.out.trace.rows.len())
}

/// Copies trace row `index`.
///
/// # Safety
/// `r` must be a live result handle and `row` writable.
#[no_mangle]
pub unsafe extern "C" fn xg_result_trace_row(
    r: *const XgResult,
    index: usize,
    row: *mut XgTraceRow,
) -> XgStatus {
    guard(|| {
        let rows = &deref(r, "result")?.out.trace.rows;
        let Some(src) = rows.get(index) else {
            return fail(
                XgStatus::InvalidArgument,
                format!("row {index} out of range ({} rows)", rows.len()),
            );
        };
        if row.is_null() {
            return fail(XgStatus::NullPointer, "row pointer is null");
        }
        *row = XgTraceRow::from(src);
        Ok(())
    })
}

/// The trace as comma-separated text with a header row. Free with
/// [`xg_string_free`].
///
/// # Safety
/// `r` must be a live result handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xg_result_trace_csv(r: *const XgResult, out: *mut *mut c_char) -> XgStatus {
    guard(|| {
        let r = deref(r, "result")?;
        if out.is_null() {
            return fail(XgStatus::NullPointer, "output pointer is null");
        }
        *out = owned_string(r.out.trace.to_csv());
        Ok(())
    })
}
