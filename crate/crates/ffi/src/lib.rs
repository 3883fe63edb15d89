//! C interface to the tabular operators and the experiment runner.
//!
//! Objects cross the boundary as opaque handles created by `domo_*_new`
//! style constructors and released with the matching `domo_*_free`. Every
//! fallible call returns a [`DomoStatus`]; on failure the message is kept
//! per thread and can be read with [`domo_last_error`]. Panics never unwind
//! into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use domo_lab::experiments::{self, ExperimentConfig};
use domo_lab::mdp::{exact_value, gen_random_mdp};
use domo_lab::operators::{apply_operator, contraction_rate};
use domo_lab::{LabError, Mdp, TabularPolicy, TraceSpec, ValueFunction};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Numeric = 4,
    Config = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Operator family selector for `trace_kind` arguments. `param` is `c_bar`
/// for V-trace and `lambda` for the two lambda families; tree backup
/// ignores it.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomoTraceKind {
    VTrace = 0,
    TreeBackup = 1,
    QLambda = 2,
    PengLambda = 3,
}

/// A finite MDP.
pub struct DomoMdp(Mdp);

/// A tabular policy, row-major `[state][action]`.
pub struct DomoPolicy(TabularPolicy);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(DomoStatus, String);

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        let status = match &e {
            LabError::Parameter(_) => DomoStatus::InvalidArgument,
            LabError::Domain(_) => DomoStatus::Domain,
            LabError::Numeric(_) => DomoStatus::Numeric,
            LabError::Config(_) => DomoStatus::Config,
            LabError::Serde(_) => DomoStatus::InvalidArgument,
            LabError::Io(_) | LabError::Csv(_) => DomoStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DomoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DomoStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure message and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DomoStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(DomoStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            DomoStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn trace_spec(kind: u32, param: f64) -> Result<TraceSpec, Failure> {
    let spec = match kind {
        k if k == DomoTraceKind::VTrace as u32 => TraceSpec::vtrace(param),
        k if k == DomoTraceKind::TreeBackup as u32 => TraceSpec::tree_backup(),
        k if k == DomoTraceKind::QLambda as u32 => TraceSpec::q_lambda(param),
        k if k == DomoTraceKind::PengLambda as u32 => TraceSpec::peng_lambda(param),
        other => return Err(invalid(format!("unknown trace kind {other}"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn copy_out(values: &[f64], out: &mut [f64]) -> Result<(), Failure> {
    if out.len() < values.len() {
        return Err(Failure(
            DomoStatus::BufferTooSmall,
            format!("output holds {} values, need {}", out.len(), values.len()),
        ));
    }
    out[..values.len()].copy_from_slice(values);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn domo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated when `len > 0`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn domo_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Samples a random MDP with Dirichlet(alpha) transition rows and standard
/// normal rewards.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn domo_mdp_random(
    n_states: usize,
    n_actions: usize,
    alpha: f64,
    gamma: f64,
    seed: u64,
    out: *mut *mut DomoMdp,
) -> DomoStatus {
    guard(|| store(out, DomoMdp(gen_random_mdp(n_states, n_actions, alpha, gamma, seed)?)))
}

/// Builds an MDP from `transitions[(x * n_actions + a) * n_states + y]` and
/// `rewards[x * n_actions + a]`.
///
/// # Safety
/// The arrays must hold `n_states^2 * n_actions` and `n_states * n_actions`
/// values; `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn domo_mdp_new(
    n_states: usize,
    n_actions: usize,
    transitions: *const f64,
    rewards: *const f64,
    gamma: f64,
    out: *mut *mut DomoMdp,
) -> DomoStatus {
    guard(|| {
        let p = slice(transitions, n_states * n_states * n_actions, "transitions")?;
        let r = slice(rewards, n_states * n_actions, "rewards")?;
        let mdp = Mdp::new(n_states, n_actions, p.to_vec(), r.to_vec(), gamma)?;
        store(out, DomoMdp(mdp))
    })
}

/// Parses an MDP from the JSON written by `domo-lab gen-mdp`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn domo_mdp_from_json(json: *const c_char, out: *mut *mut DomoMdp) -> DomoStatus {
    guard(|| store(out, DomoMdp(Mdp::from_json(text(json, "json")?)?)))
}

/// Reports the shape and discount of an MDP. Any out pointer may be null.
///
/// # Safety
/// `mdp` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn domo_mdp_shape(
    mdp: *const DomoMdp,
    n_states: *mut usize,
    n_actions: *mut usize,
    gamma: *mut f64,
) -> DomoStatus {
    guard(|| {
        let m = &deref(mdp, "mdp")?.0;
        if let Some(n) = n_states.as_mut() {
            *n = m.n_states();
        }
        if let Some(n) = n_actions.as_mut() {
            *n = m.n_actions();
        }
        if let Some(g) = gamma.as_mut() {
            *g = m.gamma();
        }
        Ok(())
    })
}

/// Releases an MDP handle. Null is ignored.
///
/// # Safety
/// `mdp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn domo_mdp_free(mdp: *mut DomoMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Builds a policy from row-major probabilities; each row must sum to one.
///
/// # Safety
/// `probs` must hold `n_states * n_actions` values; `out` must be a valid
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn domo_policy_new(
    n_states: usize,
    n_actions: usize,
    probs: *const f64,
    out: *mut *mut DomoPolicy,
) -> DomoStatus {
    guard(|| {
        let p = slice(probs, n_states * n_actions, "probs")?;
        store(out, DomoPolicy(TabularPolicy::new(n_states, n_actions, p.to_vec())?))
    })
}

/// The uniform policy.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn domo_policy_uniform(n_states: usize, n_actions: usize, out: *mut *mut DomoPolicy) -> DomoStatus {
    guard(|| {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("policy shape must be non-empty"));
        }
        store(out, DomoPolicy(TabularPolicy::uniform(n_states, n_actions)))
    })
}

/// Releases a policy handle. Null is ignored.
///
/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn domo_policy_free(policy: *mut DomoPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Writes `V^pi` into `out`, which must hold at least `n_states` values.
///
/// # Safety
/// Handles must be live; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn domo_exact_value(
    mdp: *const DomoMdp,
    policy: *const DomoPolicy,
    out: *mut f64,
    out_len: usize,
) -> DomoStatus {
    guard(|| {
        let v = exact_value(&deref(mdp, "mdp")?.0, &deref(policy, "policy")?.0)?;
        copy_out(v.as_slice(), slice_mut(out, out_len, "out")?)
    })
}

/// Applies the evaluation operator of target `pi` and behavior `mu` to `v`.
///
/// # Safety
/// Handles must be live; `v` must hold `v_len` doubles and `out` must point
/// to `out_len` writable doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn domo_apply_operator(
    mdp: *const DomoMdp,
    pi: *const DomoPolicy,
    mu: *const DomoPolicy,
    trace_kind: u32,
    param: f64,
    v: *const f64,
    v_len: usize,
    out: *mut f64,
    out_len: usize,
) -> DomoStatus {
    guard(|| {
        let spec = trace_spec(trace_kind, param)?;
        let m = &deref(mdp, "mdp")?.0;
        if v_len != m.n_states() {
            return Err(invalid(format!("v has {v_len} entries, the MDP has {} states", m.n_states())));
        }
        let input = ValueFunction(slice(v, v_len, "v")?.to_vec());
        let r = apply_operator(m, &deref(pi, "pi")?.0, &deref(mu, "mu")?.0, &spec, &input)?;
        copy_out(r.as_slice(), slice_mut(out, out_len, "out")?)
    })
}

/// Contraction rate `eta` of the operator (not defined for Peng's lambda).
///
/// # Safety
/// Handles must be live; `eta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn domo_contraction_rate(
    mdp: *const DomoMdp,
    pi: *const DomoPolicy,
    mu: *const DomoPolicy,
    trace_kind: u32,
    param: f64,
    eta: *mut f64,
) -> DomoStatus {
    guard(|| {
        let spec = trace_spec(trace_kind, param)?;
        let rate = contraction_rate(&deref(mdp, "mdp")?.0, &deref(pi, "pi")?.0, &deref(mu, "mu")?.0, &spec)?;
        *eta.as_mut().ok_or_else(|| null("eta"))? = rate.eta;
        Ok(())
    })
}

/// Runs the experiment described by the TOML text `config` (null for all
/// defaults) on `jobs` threads and writes its CSV to `csv_path`.
///
/// Seeds whose runs failed are counted in `failed_runs` (may be null) and
/// still return `Ok`; a failed audit check is not an error either. Both show
/// up in the CSV.
///
/// # Safety
/// Strings must be NUL-terminated; `failed_runs` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn domo_run_experiment(
    config: *const c_char,
    jobs: usize,
    csv_path: *const c_char,
    failed_runs: *mut usize,
) -> DomoStatus {
    guard(|| {
        let cfg = if config.is_null() {
            ExperimentConfig::default()
        } else {
            experiments::parse_config(text(config, "config")?)?
        };
        if jobs == 0 {
            return Err(invalid("jobs must be >= 1"));
        }
        let path = text(csv_path, "csv_path")?;
        let report = experiments::run_experiment(&cfg, jobs)?;
        experiments::write_csv(Path::new(path), &report.rows)?;
        if let Some(n) = failed_runs.as_mut() {
            *n = report.failures.len();
        }
        Ok(())
    })
}
