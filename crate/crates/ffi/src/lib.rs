//! C ABI over the simulator environment.
//!
//! Every fallible call returns an [`MmflStatus`]; on failure a message is
//! kept per thread and can be read with [`mmfl_last_error`]. Handles are
//! opaque and must be released with [`mmfl_sim_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mmfl_core::compute::{comp_cost, ComputeProfile};
use mmfl_core::config::RadioSection;
use mmfl_core::env::{era_actions, EnvError, MmflEnv, StepOutcome};
use mmfl_core::radio::{tx_rate, LinkBudget};
use mmfl_core::rng::{substream, SimRng, Stream};
use mmfl_core::SimConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    BufferTooSmall = 5,
    EpisodeDone = 6,
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: MmflStatus, msg: impl Into<String>) -> MmflStatus {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
    status
}

fn guarded(f: impl FnOnce() -> MmflStatus) -> MmflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MmflStatus::Internal, "panic inside the simulator"),
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mmfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The default configuration as pretty-printed JSON. Free with
/// [`mmfl_string_free`].
#[no_mangle]
pub extern "C" fn mmfl_default_config_json() -> *mut c_char {
    CString::new(SimConfig::default().to_json_pretty())
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Opaque simulator handle.
pub struct MmflSim {
    env: MmflEnv,
    era_rng: SimRng,
}

/// Summary of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MmflStepResult {
    /// Round index the step attempted.
    pub round: u64,
    pub feasible: bool,
    /// The step was rejected and the environment reset.
    pub reset: bool,
    pub done: bool,
    /// Round time in seconds.
    pub t_k: f64,
    /// Energy spent by all vehicles in joules.
    pub energy_total: f64,
}

/// Creates a simulator from a JSON configuration (NULL selects the
/// defaults) and a master seed.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_new(config_json: *const c_char, seed: u64, out: *mut *mut MmflSim) -> MmflStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MmflStatus::NullPointer, "out is NULL");
        }
        *out = ptr::null_mut();
        let config = if config_json.is_null() {
            SimConfig::default()
        } else {
            let Ok(text) = CStr::from_ptr(config_json).to_str() else {
                return fail(MmflStatus::InvalidUtf8, "config is not UTF-8");
            };
            match SimConfig::from_json_str(text) {
                Ok(c) => c,
                Err(e) => return fail(MmflStatus::InvalidConfig, e.to_string()),
            }
        };
        match MmflEnv::new(&config, seed) {
            Ok(env) => {
                let sim = MmflSim {
                    env,
                    era_rng: substream(seed, Stream::Env, 0),
                };
                *out = Box::into_raw(Box::new(sim));
                MmflStatus::Ok
            }
            Err(e) => fail(MmflStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// # Safety
/// `sim` must be NULL or a handle from [`mmfl_sim_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_free(sim: *mut MmflSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

unsafe fn sim_ref<'a>(sim: *const MmflSim) -> Option<&'a MmflSim> {
    sim.as_ref()
}

/// Number of agents (vehicles); 0 for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_agents(sim: *const MmflSim) -> usize {
    sim_ref(sim).map_or(0, |s| s.env.agents())
}

/// Number of tasks; 0 for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_tasks(sim: *const MmflSim) -> usize {
    sim_ref(sim).map_or(0, |s| s.env.tasks())
}

/// Length of one agent's observation; 0 for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_obs_dim(sim: *const MmflSim) -> usize {
    sim_ref(sim).map_or(0, |s| s.env.obs_dim())
}

/// Number of discrete actions per agent (tasks plus idle); 0 for NULL.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_action_dim(sim: *const MmflSim) -> usize {
    sim_ref(sim).map_or(0, |s| s.env.action_dim())
}

/// Resets energy, recency, models and the round counter.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_reset(sim: *mut MmflSim) -> MmflStatus {
    guarded(|| match sim.as_mut() {
        Some(s) => {
            s.env.reset();
            MmflStatus::Ok
        }
        None => fail(MmflStatus::NullPointer, "sim is NULL"),
    })
}

/// Writes all observations, agent-major, into `out` (`agents * obs_dim`
/// doubles).
///
/// # Safety
/// `sim` must be NULL or a live handle; `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_observe(sim: *const MmflSim, out: *mut f64, len: usize) -> MmflStatus {
    guarded(|| {
        let Some(s) = sim_ref(sim) else {
            return fail(MmflStatus::NullPointer, "sim is NULL");
        };
        if out.is_null() {
            return fail(MmflStatus::NullPointer, "out is NULL");
        }
        let flat = s.env.observations().concat();
        if len < flat.len() {
            return fail(
                MmflStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", flat.len()),
            );
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
        MmflStatus::Ok
    })
}

unsafe fn finish_step(
    outcome: Result<StepOutcome, EnvError>,
    rewards: *mut f64,
    rewards_len: usize,
    result: *mut MmflStepResult,
) -> MmflStatus {
    let out = match outcome {
        Ok(o) => o,
        Err(EnvError::Done) => return fail(MmflStatus::EpisodeDone, "episode is done; call mmfl_sim_reset"),
        Err(e @ (EnvError::ActionOutOfRange { .. } | EnvError::ActionCount { .. })) => {
            return fail(MmflStatus::InvalidArgument, e.to_string())
        }
        Err(e) => return fail(MmflStatus::Internal, e.to_string()),
    };
    if !rewards.is_null() {
        let n = out.rewards.len().min(rewards_len);
        ptr::copy_nonoverlapping(out.rewards.as_ptr(), rewards, n);
    }
    if let Some(r) = result.as_mut() {
        *r = MmflStepResult {
            round: out.info.k as u64,
            feasible: out.info.feasible,
            reset: out.info.reset,
            done: out.done,
            t_k: out.info.accounting.t_k,
            energy_total: out.info.accounting.energy_total(),
        };
    }
    MmflStatus::Ok
}

/// Advances one round with one action per agent: `0..tasks` joins that
/// task, `tasks` stays idle. Per-agent rewards go to `rewards` (up to
/// `rewards_len` entries) and the summary to `result`; both may be NULL.
///
/// # Safety
/// `sim` must be a live handle, `actions` must point to `n_actions`
/// values, and non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_step(
    sim: *mut MmflSim,
    actions: *const u32,
    n_actions: usize,
    rewards: *mut f64,
    rewards_len: usize,
    result: *mut MmflStepResult,
) -> MmflStatus {
    guarded(|| {
        let Some(s) = sim.as_mut() else {
            return fail(MmflStatus::NullPointer, "sim is NULL");
        };
        if actions.is_null() && n_actions > 0 {
            return fail(MmflStatus::NullPointer, "actions is NULL");
        }
        let acts: Vec<usize> = if n_actions == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(actions, n_actions).iter().map(|&a| a as usize).collect()
        };
        finish_step(s.env.step(&acts), rewards, rewards_len, result)
    })
}

/// Advances one round with the equal-resource baseline schedule.
///
/// # Safety
/// As for [`mmfl_sim_step`].
#[no_mangle]
pub unsafe extern "C" fn mmfl_sim_step_era(
    sim: *mut MmflSim,
    rewards: *mut f64,
    rewards_len: usize,
    result: *mut MmflStepResult,
) -> MmflStatus {
    guarded(|| {
        let Some(s) = sim.as_mut() else {
            return fail(MmflStatus::NullPointer, "sim is NULL");
        };
        let outcome = era_actions(&s.env, &mut s.era_rng).and_then(|sched| s.env.step_schedule(sched));
        finish_step(outcome, rewards, rewards_len, result)
    })
}

/// Radio constants in configuration units (dBm, dB, Hz, metres).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmflRadio {
    pub bandwidth_hz: f64,
    pub subcarriers: u32,
    pub sigma2_dbm: f64,
    pub h_ref_db: f64,
    pub p_dbm: f64,
    pub nu: f64,
    pub d_u: f64,
    pub xi: f64,
}

impl From<MmflRadio> for RadioSection {
    fn from(r: MmflRadio) -> Self {
        RadioSection {
            bandwidth_hz: r.bandwidth_hz,
            subcarriers: r.subcarriers as usize,
            sigma2_dbm: r.sigma2_dbm,
            h_ref_db: r.h_ref_db,
            p_dbm: r.p_dbm,
            nu: r.nu,
            d_u: r.d_u,
            xi: r.xi,
        }
    }
}

#[no_mangle]
pub extern "C" fn mmfl_radio_default() -> MmflRadio {
    let r = RadioSection::default();
    MmflRadio {
        bandwidth_hz: r.bandwidth_hz,
        subcarriers: r.subcarriers as u32,
        sigma2_dbm: r.sigma2_dbm,
        h_ref_db: r.h_ref_db,
        p_dbm: r.p_dbm,
        nu: r.nu,
        d_u: r.d_u,
        xi: r.xi,
    }
}

/// Uplink rate in bit/s for bandwidth share `ratio` over distance `d`.
///
/// # Safety
/// `radio` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mmfl_tx_rate(radio: *const MmflRadio, ratio: f64, d: f64, out: *mut f64) -> MmflStatus {
    let (Some(r), false) = (radio.as_ref(), out.is_null()) else {
        return fail(MmflStatus::NullPointer, "radio or out is NULL");
    };
    if !(ratio.is_finite() && d.is_finite() && ratio >= 0.0 && d >= 0.0) {
        return fail(MmflStatus::InvalidArgument, "ratio and distance must be finite and non-negative");
    }
    *out = tx_rate(ratio, &LinkBudget::from_config(&RadioSection::from(*r)), d);
    MmflStatus::Ok
}

/// Local computation time (s) and energy (J) for `dataset_bits` of data.
///
/// # Safety
/// `t_c` and `e_c` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mmfl_comp_cost(
    dataset_bits: f64,
    f_hz: f64,
    q: f64,
    lambda_cap: f64,
    local_iters: u32,
    t_c: *mut f64,
    e_c: *mut f64,
) -> MmflStatus {
    if t_c.is_null() || e_c.is_null() {
        return fail(MmflStatus::NullPointer, "t_c or e_c is NULL");
    }
    if !(f_hz > 0.0 && q >= 0.0 && lambda_cap >= 0.0 && dataset_bits >= 0.0) {
        return fail(MmflStatus::InvalidArgument, "need f_hz > 0 and non-negative q, lambda_cap, bits");
    }
    let p = ComputeProfile {
        f_hz,
        q,
        lambda_cap,
        local_iters: local_iters as usize,
    };
    let (t, e) = comp_cost(dataset_bits, &p);
    *t_c = t;
    *e_c = e;
    MmflStatus::Ok
}
