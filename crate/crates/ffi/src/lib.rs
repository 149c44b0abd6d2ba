//! C ABI over the `kvedram` simulator.
//!
//! Scenarios and reports are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns a
//! [`KvedramStatus`]; on failure [`kvedram_last_error_message`] describes the
//! problem for the calling thread. Strings returned through `char **` are
//! owned by the caller and released with [`kvedram_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kvedram::cli::RunConfig;
use kvedram::perfmodel::{self, report_diff, run_config, RunReport, Scenario};
use kvedram::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvedramStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Capacity = 3,
    Io = 4,
    Parse = 5,
    SchemaMismatch = 6,
    InvalidUtf8 = 7,
    Internal = 8,
}

/// A validated run scenario.
pub struct KvedramScenario(Scenario);

/// The result of one run.
pub struct KvedramReport(RunReport);

/// Joules per category.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvedramEnergy {
    pub compute: f64,
    pub weights: f64,
    pub kv_cache: f64,
    pub refresh: f64,
    pub leakage: f64,
    pub dram: f64,
    pub total: f64,
}

/// Seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvedramLatency {
    pub total: f64,
    pub prefill: f64,
    pub decode: f64,
    pub compute: f64,
    pub dram: f64,
    pub on_chip: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvedramLifetimes {
    pub x: f64,
    pub q: f64,
    pub k: f64,
    pub v: f64,
    pub total: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> KvedramStatus {
    match e {
        Error::InvalidConfig(_) | Error::Config(_) => KvedramStatus::InvalidConfig,
        Error::Capacity { .. } => KvedramStatus::Capacity,
        Error::Io(_) => KvedramStatus::Io,
        Error::Parse { .. } | Error::Validation { .. } | Error::Json(_) => KvedramStatus::Parse,
        Error::SchemaMismatch(..) => KvedramStatus::SchemaMismatch,
        _ => KvedramStatus::Internal,
    }
}

struct Fail(KvedramStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KvedramStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KvedramStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            KvedramStatus::Internal
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(KvedramStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(KvedramStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn in_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Fail(KvedramStatus::Internal, e.to_string()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn kvedram_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn kvedram_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a scenario from a TOML run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_scenario_from_toml(toml: *const c_char, out: *mut *mut KvedramScenario) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let sc = RunConfig::from_toml(str_arg(toml, "toml")?)?.scenario()?;
        *out = Box::into_raw(Box::new(KvedramScenario(sc)));
        Ok(())
    })
}

/// Build a scenario from a task preset and a system name. `system` may be
/// null for the default system.
///
/// # Safety
/// `preset` and, when non-null, `system` must be NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_scenario_from_preset(
    preset: *const c_char,
    system: *const c_char,
    out: *mut *mut KvedramScenario,
) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let mut cfg = RunConfig::default();
        cfg.workload.preset = Some(str_arg(preset, "preset")?.to_string());
        if !system.is_null() {
            cfg.system.name = Some(str_arg(system, "system")?.to_string());
        }
        *out = Box::into_raw(Box::new(KvedramScenario(cfg.scenario()?)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn kvedram_scenario_set_seed(scenario: *mut KvedramScenario, seed: u64) -> KvedramStatus {
    guard(|| {
        out_arg(scenario, "scenario")?.0.seed = seed;
        Ok(())
    })
}

/// Resolved scenario as JSON.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_scenario_to_json(scenario: *const KvedramScenario, out: *mut *mut c_char) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let json = serde_json::to_string_pretty(&in_arg(scenario, "scenario")?.0).map_err(Error::from)?;
        *out = c_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kvedram_scenario_free(scenario: *mut KvedramScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_run(scenario: *const KvedramScenario, out: *mut *mut KvedramReport) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let report = run_config(&in_arg(scenario, "scenario")?.0)?;
        *out = Box::into_raw(Box::new(KvedramReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kvedram_report_free(report: *mut KvedramReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_report_energy(report: *const KvedramReport, out: *mut KvedramEnergy) -> KvedramStatus {
    guard(|| {
        let e = in_arg(report, "report")?.0.energy;
        *out_arg(out, "out")? = KvedramEnergy {
            compute: e.compute,
            weights: e.weights,
            kv_cache: e.kv_cache,
            refresh: e.refresh,
            leakage: e.leakage,
            dram: e.dram,
            total: e.total,
        };
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_report_latency(report: *const KvedramReport, out: *mut KvedramLatency) -> KvedramStatus {
    guard(|| {
        let l = in_arg(report, "report")?.0.latency;
        *out_arg(out, "out")? = KvedramLatency {
            total: l.total,
            prefill: l.prefill,
            decode: l.decode,
            compute: l.compute,
            dram: l.dram,
            on_chip: l.on_chip,
        };
        Ok(())
    })
}

/// Retention failures per refresh group (MSB-HST, LSB-HST, MSB-LST, LSB-LST).
///
/// # Safety
/// `report` must be a live handle; `out` must point to 4 writable values.
#[no_mangle]
pub unsafe extern "C" fn kvedram_report_flips(report: *const KvedramReport, out: *mut u64) -> KvedramStatus {
    guard(|| {
        let flips = in_arg(report, "report")?.0.counters.flips;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(flips.as_ptr(), out, 4);
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_report_to_json(report: *const KvedramReport, out: *mut *mut c_char) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = c_string(in_arg(report, "report")?.0.to_json()?)?;
        Ok(())
    })
}

/// Parse a report written by `kvedram_report_to_json` or the CLI.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_report_from_json(json: *const c_char, out: *mut *mut KvedramReport) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let r = RunReport::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(KvedramReport(r)));
        Ok(())
    })
}

/// Per-category comparison of `a` against `b`, as JSON.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_diff_json(
    a: *const KvedramReport,
    b: *const KvedramReport,
    out: *mut *mut c_char,
) -> KvedramStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = report_diff(&in_arg(a, "a")?.0, &in_arg(b, "b")?.0)?;
        *out = c_string(serde_json::to_string_pretty(&d).map_err(Error::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kvedram_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Data lifetimes of one attention block. `kelle` selects the overlapped
/// schedule; zero selects the serial one.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_lifetime(t_sram: f64, t_edram: f64, kelle: c_int, out: *mut KvedramLifetimes) -> KvedramStatus {
    guard(|| {
        if !(t_sram >= 0.0 && t_edram >= 0.0) {
            return Err(Fail(KvedramStatus::InvalidConfig, "transfer times must be >= 0".into()));
        }
        let l = if kelle != 0 {
            perfmodel::lifetime_kelle(t_sram, t_edram)
        } else {
            perfmodel::lifetime_baseline(t_sram, t_edram)
        };
        *out_arg(out, "out")? = KvedramLifetimes {
            x: l.x,
            q: l.q,
            k: l.k,
            v: l.v,
            total: l.total,
        };
        Ok(())
    })
}

/// Latency of fetching `vectors` KV vectors with a fraction `alpha` rebuilt
/// on the array instead of loaded.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kvedram_recompute_tradeoff(
    alpha: f64,
    vectors: usize,
    load_s: f64,
    recompute_s: f64,
    out: *mut f64,
) -> KvedramStatus {
    guard(|| {
        *out_arg(out, "out")? = perfmodel::recompute_tradeoff(alpha, vectors, load_s, recompute_s)?;
        Ok(())
    })
}
