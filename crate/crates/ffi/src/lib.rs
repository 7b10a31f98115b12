//! C ABI for embedding the trainer and evaluator in other languages.
//!
//! Conventions:
//! - handles are opaque pointers created by `*_create`/`*_load` and released
//!   by the matching `*_free`; passing null anywhere is an error, never UB,
//! - every fallible call returns a [`DqnStatus`]; the last error message is
//!   kept per thread and fetched with [`dqn_last_error_message`],
//! - buffers are caller-allocated; `*_dim`/`*_count` report required sizes.
//!
//! The generated header lands in `include/distdqn.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use distdqn::envs::{env_by_name, tabular_by_name, value_iteration, Environment};
use distdqn::harness::{
    dqn_normalize as harness_dqn_normalize, normalize, run_experiment, DqnNorm, RunConfig,
};
use distdqn::nn::{layers_from_layout, load_checkpoint, save_checkpoint, QNetwork};
use distdqn::rl::argmax_lowest;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Internal = 5,
}

/// Opaque Q-network handle.
pub struct DqnNetwork {
    net: QNetwork,
}

/// Opaque environment handle.
pub struct DqnEnv {
    env: Box<dyn Environment>,
}

/// Copy the last error message for the calling thread into `buf` as a
/// NUL-terminated string; returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null to query the length).
#[no_mangle]
pub unsafe extern "C" fn dqn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, DqnStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(DqnStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid utf-8");
        DqnStatus::InvalidArgument
    })
}

fn guard(f: impl FnOnce() -> DqnStatus) -> DqnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DqnStatus::Internal
        }
    }
}

// --- networks ----------------------------------------------------------------

/// Load a checkpoint file into a network handle; null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dqn_network_load(path: *const c_char) -> *mut DqnNetwork {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let path = match unsafe { cstr(path) } {
            Ok(p) => p,
            Err(_) => return std::ptr::null_mut(),
        };
        let params = match load_checkpoint(Path::new(path)) {
            Ok(p) => p,
            Err(e) => {
                set_error(e.to_string());
                return std::ptr::null_mut();
            }
        };
        let layers = match layers_from_layout(params.layout()) {
            Ok(l) => l,
            Err(e) => {
                set_error(e.to_string());
                return std::ptr::null_mut();
            }
        };
        match QNetwork::from_params(layers, params) {
            Ok(net) => Box::into_raw(Box::new(DqnNetwork { net })),
            Err(e) => {
                set_error(e.to_string());
                std::ptr::null_mut()
            }
        }
    }));
    result.unwrap_or(std::ptr::null_mut())
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_network_save(net: *const DqnNetwork, path: *const c_char) -> DqnStatus {
    guard(|| {
        if net.is_null() {
            set_error("null network handle");
            return DqnStatus::NullPointer;
        }
        let path = match unsafe { cstr(path) } {
            Ok(p) => p,
            Err(s) => return s,
        };
        let net = unsafe { &*net };
        match save_checkpoint(Path::new(path), net.net.params()) {
            Ok(()) => DqnStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                DqnStatus::Io
            }
        }
    })
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_network_free(net: *mut DqnNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_network_input_dim(net: *const DqnNetwork) -> u32 {
    if net.is_null() {
        return 0;
    }
    unsafe { &*net }.net.input_dim() as u32
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_network_action_count(net: *const DqnNetwork) -> u32 {
    if net.is_null() {
        return 0;
    }
    unsafe { &*net }.net.n_actions() as u32
}

/// Q-values for an observation; `q_out` must hold `action_count` doubles.
///
/// # Safety
/// `net` must come from `dqn_network_load`; `obs` must point to `obs_len`
/// doubles and `q_out` to `q_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dqn_network_forward(
    net: *const DqnNetwork,
    obs: *const f64,
    obs_len: usize,
    q_out: *mut f64,
    q_len: usize,
) -> DqnStatus {
    guard(|| {
        if net.is_null() || obs.is_null() || q_out.is_null() {
            set_error("null pointer argument");
            return DqnStatus::NullPointer;
        }
        let net = unsafe { &*net };
        if q_len < net.net.n_actions() {
            set_error(format!(
                "q buffer holds {q_len}, need {}",
                net.net.n_actions()
            ));
            return DqnStatus::BufferTooSmall;
        }
        let state = unsafe { std::slice::from_raw_parts(obs, obs_len) };
        match net.net.forward(state) {
            Ok(q) => {
                unsafe { std::ptr::copy_nonoverlapping(q.as_ptr(), q_out, q.len()) };
                DqnStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DqnStatus::InvalidArgument
            }
        }
    })
}

/// Greedy action for an observation (lowest index wins ties).
///
/// # Safety
/// `net` must come from `dqn_network_load`; `obs` must point to `obs_len`
/// doubles; `action_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqn_network_greedy_action(
    net: *const DqnNetwork,
    obs: *const f64,
    obs_len: usize,
    action_out: *mut u32,
) -> DqnStatus {
    guard(|| {
        if net.is_null() || obs.is_null() || action_out.is_null() {
            set_error("null pointer argument");
            return DqnStatus::NullPointer;
        }
        let net = unsafe { &*net };
        let state = unsafe { std::slice::from_raw_parts(obs, obs_len) };
        match net.net.forward(state) {
            Ok(q) => {
                unsafe { *action_out = argmax_lowest(&q) as u32 };
                DqnStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DqnStatus::InvalidArgument
            }
        }
    })
}

// --- environments --------------------------------------------------------------

/// Create a named environment ("chain" or "gridworld"); null if unknown.
///
/// # Safety
/// `name` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dqn_env_create(name: *const c_char) -> *mut DqnEnv {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let name = match unsafe { cstr(name) } {
            Ok(n) => n,
            Err(_) => return std::ptr::null_mut(),
        };
        match env_by_name(name) {
            Some(env) => Box::into_raw(Box::new(DqnEnv { env })),
            None => {
                set_error(format!("unknown environment '{name}'"));
                std::ptr::null_mut()
            }
        }
    }));
    result.unwrap_or(std::ptr::null_mut())
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_env_free(env: *mut DqnEnv) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_env_observation_dim(env: *const DqnEnv) -> u32 {
    if env.is_null() {
        return 0;
    }
    unsafe { &*env }.env.observation_dim() as u32
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_env_action_count(env: *const DqnEnv) -> u32 {
    if env.is_null() {
        return 0;
    }
    unsafe { &*env }.env.action_count() as u32
}

/// # Safety
/// The handle must come from the matching constructor (or be null, which
/// reports an error or acts as a no-op).
#[no_mangle]
pub unsafe extern "C" fn dqn_env_null_action(env: *const DqnEnv) -> u32 {
    if env.is_null() {
        return 0;
    }
    unsafe { &*env }.env.null_action() as u32
}

/// Reset with a seed; writes the initial observation.
///
/// # Safety
/// `env` must come from `dqn_env_create`; `obs_out` must point to
/// `obs_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dqn_env_reset(
    env: *mut DqnEnv,
    seed: u64,
    obs_out: *mut f64,
    obs_len: usize,
) -> DqnStatus {
    guard(|| {
        if env.is_null() || obs_out.is_null() {
            set_error("null pointer argument");
            return DqnStatus::NullPointer;
        }
        let env = unsafe { &mut *env };
        let dim = env.env.observation_dim();
        if obs_len < dim {
            set_error(format!("observation buffer holds {obs_len}, need {dim}"));
            return DqnStatus::BufferTooSmall;
        }
        let obs = env.env.reset(seed);
        unsafe { std::ptr::copy_nonoverlapping(obs.as_ptr(), obs_out, obs.len()) };
        DqnStatus::Ok
    })
}

/// Step the environment; writes the next observation, reward and terminal
/// flag. Stepping a finished episode is an InvalidArgument error.
///
/// # Safety
/// `env` must come from `dqn_env_create`; `obs_out` must point to
/// `obs_len` writable doubles; `reward_out` and `terminal_out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dqn_env_step(
    env: *mut DqnEnv,
    action: u32,
    obs_out: *mut f64,
    obs_len: usize,
    reward_out: *mut f64,
    terminal_out: *mut u8,
) -> DqnStatus {
    guard(|| {
        if env.is_null() || obs_out.is_null() || reward_out.is_null() || terminal_out.is_null() {
            set_error("null pointer argument");
            return DqnStatus::NullPointer;
        }
        let env = unsafe { &mut *env };
        let dim = env.env.observation_dim();
        if obs_len < dim {
            set_error(format!("observation buffer holds {obs_len}, need {dim}"));
            return DqnStatus::BufferTooSmall;
        }
        match env.env.step(action as usize) {
            Ok(r) => {
                unsafe {
                    std::ptr::copy_nonoverlapping(r.observation.as_ptr(), obs_out, dim);
                    *reward_out = r.reward;
                    *terminal_out = r.terminal as u8;
                }
                DqnStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DqnStatus::InvalidArgument
            }
        }
    })
}

// --- scoring and experiments -----------------------------------------------------

/// Expert-anchored normalization: 100*(agent-random)/(human-random).
/// Fails with InvalidArgument when human == random.
///
/// # Safety
/// `out` must be a writable double pointer.
#[no_mangle]
pub unsafe extern "C" fn dqn_normalize_score(
    agent: f64,
    random: f64,
    human: f64,
    out: *mut f64,
) -> DqnStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return DqnStatus::NullPointer;
        }
        match normalize(agent, random, human) {
            Ok(v) => {
                unsafe { *out = v };
                DqnStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DqnStatus::InvalidArgument
            }
        }
    })
}

/// Reference-agent normalization. `defined_out` is 0 when the value has no
/// meaning (undefined baseline even after the optional fallback).
///
/// # Safety
/// `out` and `defined_out` must be writable pointers.
#[no_mangle]
pub unsafe extern "C" fn dqn_reference_normalize_score(
    gorila: f64,
    random: f64,
    dqn: f64,
    use_fallback: u8,
    out: *mut f64,
    defined_out: *mut u8,
) -> DqnStatus {
    guard(|| {
        if out.is_null() || defined_out.is_null() {
            set_error("null output pointer");
            return DqnStatus::NullPointer;
        }
        match harness_dqn_normalize(gorila, random, dqn, use_fallback != 0) {
            DqnNorm::Standard(v) | DqnNorm::Fallback(v) => unsafe {
                *out = v;
                *defined_out = 1;
            },
            DqnNorm::Undefined => unsafe {
                *out = 0.0;
                *defined_out = 0;
            },
        }
        DqnStatus::Ok
    })
}

/// Exact optimal Q by value iteration on a named environment; `q_out` is
/// filled row-major over states. The required length is always reported
/// through `len_out`, even when the buffer is too small.
///
/// # Safety
/// `env_name` must be a valid NUL-terminated string; `q_out` must point to
/// `q_cap` writable doubles (or be null to query); `len_out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dqn_value_iteration(
    env_name: *const c_char,
    gamma: f64,
    tol: f64,
    q_out: *mut f64,
    q_cap: usize,
    len_out: *mut usize,
) -> DqnStatus {
    guard(|| {
        if len_out.is_null() {
            set_error("null length pointer");
            return DqnStatus::NullPointer;
        }
        let name = match unsafe { cstr(env_name) } {
            Ok(n) => n,
            Err(s) => return s,
        };
        let Some(mdp) = tabular_by_name(name) else {
            set_error(format!("unknown environment '{name}'"));
            return DqnStatus::InvalidArgument;
        };
        let table = match value_iteration(mdp.as_ref(), gamma, tol) {
            Ok(t) => t,
            Err(e) => {
                set_error(e.to_string());
                return DqnStatus::InvalidArgument;
            }
        };
        let needed = mdp.n_states() * mdp.n_actions();
        unsafe { *len_out = needed };
        if q_out.is_null() || q_cap < needed {
            set_error(format!("q buffer holds {q_cap}, need {needed}"));
            return DqnStatus::BufferTooSmall;
        }
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                unsafe { *q_out.add(s * mdp.n_actions() + a) = table.q(s, a) };
            }
        }
        DqnStatus::Ok
    })
}

/// Run a full experiment from config text; writes the run directory and
/// reports the final greedy evaluation score.
///
/// # Safety
/// `config_text` and `out_dir` must be valid NUL-terminated strings;
/// `final_score_out` may be null or must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqn_run_experiment(
    config_text: *const c_char,
    out_dir: *const c_char,
    final_score_out: *mut f64,
) -> DqnStatus {
    guard(|| {
        let config = match unsafe { cstr(config_text) } {
            Ok(c) => c,
            Err(s) => return s,
        };
        let out = match unsafe { cstr(out_dir) } {
            Ok(o) => o,
            Err(s) => return s,
        };
        let cfg = match RunConfig::parse(config) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.to_string());
                return DqnStatus::InvalidArgument;
            }
        };
        match run_experiment(&cfg, Path::new(out)) {
            Ok(outcome) => {
                if !final_score_out.is_null() {
                    unsafe { *final_score_out = outcome.final_score };
                }
                DqnStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DqnStatus::Internal
            }
        }
    })
}
