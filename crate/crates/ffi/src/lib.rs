//! C ABI over the ctmr simulator.
//!
//! Every fallible call returns a [`CtmrStatus`]. On failure the message is
//! kept per thread and read back with [`ctmr_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ctmr::chunk::{f_value, make_chunk, Chunk, Disposition, Gist, ProcessorId};
use ctmr::error::CtmError;
use ctmr::harness::{inject_fault, reboot, Simulation};
use ctmr::oracle::win_distribution_analytic;
use ctmr::scenario::{builtin, Fault, ScenarioConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtmrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    RunComplete = 4,
    Internal = 5,
    Panic = 6,
}

/// Opaque simulation handle.
pub struct CtmrSim {
    sim: Simulation,
}

/// The chunk broadcast on a tick. `present` is 0 while the pipeline fills.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CtmrWinner {
    pub present: u8,
    pub origin: u32,
    pub time: u64,
    pub weight: f64,
    pub intensity: f64,
    pub mood: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: CtmrStatus, msg: &str) -> CtmrStatus {
    set_error(msg);
    status
}

fn from_error(e: CtmError) -> CtmrStatus {
    let status = match e {
        CtmError::InvalidInput(_) | CtmError::UnknownSketch(_) | CtmError::NoLink { .. } | CtmError::TooLarge { .. } => {
            CtmrStatus::InvalidArgument
        }
        CtmError::Config(_) | CtmError::Io(_) => CtmrStatus::Config,
        CtmError::RunComplete(_) => CtmrStatus::RunComplete,
        CtmError::Scheduler { .. } => CtmrStatus::Internal,
    };
    fail(status, &e.to_string())
}

fn guard(body: impl FnOnce() -> CtmrStatus) -> CtmrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => {
            if s == CtmrStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(CtmrStatus::Panic, "panic inside ctmr"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, CtmrStatus> {
    if p.is_null() {
        return Err(fail(CtmrStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CtmrStatus::InvalidArgument, "string argument is not UTF-8"))
}

fn create(cfg: ScenarioConfig, out: *mut *mut CtmrSim) -> CtmrStatus {
    match Simulation::new(cfg) {
        Ok(sim) => {
            unsafe { *out = Box::into_raw(Box::new(CtmrSim { sim })) };
            CtmrStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Builds a simulation from a TOML scenario. On success `*out` owns a handle
/// to be released with [`ctmr_sim_free`].
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_from_toml(toml: *const c_char, out: *mut *mut CtmrSim) -> CtmrStatus {
    guard(|| {
        if out.is_null() {
            return fail(CtmrStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScenarioConfig::from_toml(text) {
            Ok(cfg) => create(cfg, out),
            Err(e) => from_error(e),
        }
    })
}

/// Builds one of the bundled scenarios with the given seed.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_from_builtin(name: *const c_char, seed: u64, out: *mut *mut CtmrSim) -> CtmrStatus {
    guard(|| {
        if out.is_null() {
            return fail(CtmrStatus::NullPointer, "out is null");
        }
        let name = match str_arg(name) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match builtin(name) {
            Some(mut cfg) => {
                cfg.seed = seed;
                create(cfg, out)
            }
            None => fail(CtmrStatus::Config, &format!("unknown scenario `{name}`")),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must come from a constructor above and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_free(sim: *mut CtmrSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one tick. `out` may be null.
///
/// # Safety
/// `sim` must be a live handle and `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_tick(sim: *mut CtmrSim, out: *mut CtmrWinner) -> CtmrStatus {
    guard(|| {
        let Some(s) = sim.as_mut() else {
            return fail(CtmrStatus::NullPointer, "sim is null");
        };
        match s.sim.step() {
            Ok(rec) => {
                if let Some(o) = out.as_mut() {
                    *o = rec.winner.as_ref().map(winner).unwrap_or_default();
                }
                CtmrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

fn winner(c: &Chunk) -> CtmrWinner {
    CtmrWinner {
        present: 1,
        origin: c.origin.0,
        time: c.time,
        weight: c.weight,
        intensity: c.intensity(),
        mood: c.mood(),
    }
}

/// Runs up to `ticks` ticks, stopping early at the end of the lifetime.
/// `winners` (may be null) receives the number of broadcasts.
///
/// # Safety
/// `sim` must be a live handle and `winners` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_run(sim: *mut CtmrSim, ticks: u64, winners: *mut u64) -> CtmrStatus {
    guard(|| {
        let Some(s) = sim.as_mut() else {
            return fail(CtmrStatus::NullPointer, "sim is null");
        };
        let mut n = 0;
        for _ in 0..ticks {
            if s.sim.is_done() {
                break;
            }
            match s.sim.step() {
                Ok(rec) => n += rec.winner.is_some() as u64,
                Err(e) => return from_error(e),
            }
        }
        if let Some(w) = winners.as_mut() {
            *w = n;
        }
        CtmrStatus::Ok
    })
}

/// Ticks completed so far.
///
/// # Safety
/// `sim` must be null or a live handle. Null yields 0.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_current_tick(sim: *const CtmrSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.instance().current_tick())
}

/// Number of processors (leaves) in the tree.
///
/// # Safety
/// `sim` must be null or a live handle. Null yields 0.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_processors(sim: *const CtmrSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.instance().params().processors as u64)
}

/// Restarts competition under a new disposition, keeping all learned state.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_reboot(sim: *mut CtmrSim, disposition: f64) -> CtmrStatus {
    guard(|| {
        let Some(s) = sim.as_mut() else {
            return fail(CtmrStatus::NullPointer, "sim is null");
        };
        match reboot(s.sim.instance_mut(), disposition) {
            Ok(()) => CtmrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Applies a fault now, written as on the command line, e.g.
/// `zero_confidence:vision`.
///
/// # Safety
/// `sim` must be a live handle and `fault` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctmr_sim_inject(sim: *mut CtmrSim, fault: *const c_char) -> CtmrStatus {
    guard(|| {
        let Some(s) = sim.as_mut() else {
            return fail(CtmrStatus::NullPointer, "sim is null");
        };
        let text = match str_arg(fault) {
            Ok(t) => t,
            Err(st) => return st,
        };
        match text.parse::<Fault>().and_then(|f| inject_fault(s.sim.instance_mut(), &f)) {
            Ok(()) => CtmrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// `max(0, |w| + d*w)` for a single chunk of weight `w`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctmr_f_value(weight: f64, disposition: f64, out: *mut f64) -> CtmrStatus {
    guard(|| {
        if out.is_null() {
            return fail(CtmrStatus::NullPointer, "out is null");
        }
        let d = match Disposition::new(disposition) {
            Ok(d) => d,
            Err(e) => return from_error(e),
        };
        match make_chunk(ProcessorId(0), 0, Gist::empty(), weight) {
            Ok(c) => {
                *out = f_value(&c, d);
                CtmrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Probability that each of `n` leaves with the given weights wins one
/// competition. `n` must be a power of two; `out` holds `n` doubles.
///
/// # Safety
/// `weights` must hold `n` readable doubles and `out` `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn ctmr_win_distribution(weights: *const f64, n: usize, disposition: f64, out: *mut f64) -> CtmrStatus {
    guard(|| {
        if weights.is_null() || out.is_null() {
            return fail(CtmrStatus::NullPointer, "weights or out is null");
        }
        if n == 0 || !n.is_power_of_two() {
            return fail(CtmrStatus::InvalidArgument, &format!("leaf count {n} is not a power of two"));
        }
        let d = match Disposition::new(disposition) {
            Ok(d) => d,
            Err(e) => return from_error(e),
        };
        let w = std::slice::from_raw_parts(weights, n);
        let chunks: Result<Vec<Chunk>, CtmError> = w
            .iter()
            .enumerate()
            .map(|(i, &x)| make_chunk(ProcessorId(i as u32), 0, Gist::empty(), x))
            .collect();
        match chunks {
            Ok(c) => {
                let p = win_distribution_analytic(&c, d);
                std::slice::from_raw_parts_mut(out, n).copy_from_slice(&p);
                CtmrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Message for the last failed call on this thread, empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ctmr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
