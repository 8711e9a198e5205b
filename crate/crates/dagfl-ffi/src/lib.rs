//! C ABI for the dagfl simulator.
//!
//! Conventions:
//! - Handles (`DagflConfig`, `DagflRun`) are opaque; free them with the
//!   matching `*_free` function exactly once.
//! - Functions return [`DagflStatus`]; on any non-OK status a thread-local
//!   message is available via [`dagfl_last_error_message`].
//! - Returned `char*` strings are NUL-terminated, owned by the caller, and
//!   must be released with [`dagfl_string_free`]. `dagfl_version` is the one
//!   exception: it returns a static string.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dagfl_core::config::RunConfig;
use dagfl_core::ledger::{parse_export, path_from_export, verify_path, Digest, Verdict};
use dagfl_core::sim::{self, Policy, RunOutput};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DagflStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An argument failed validation (bad UTF-8, bad hex, unknown policy).
    InvalidArgument = 2,
    /// The configuration failed to load or validate.
    ConfigError = 3,
    /// The simulation failed.
    RuntimeError = 4,
    /// Verification ran and rejected the path.
    VerificationFailed = 5,
    /// The requested artifact does not exist for this run (e.g. the ledger
    /// of a baseline policy).
    NotAvailable = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<Vec<u8>>) {
    let message = CString::new(message).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn fail(status: DagflStatus, message: impl std::fmt::Display) -> DagflStatus {
    set_error(message.to_string());
    status
}

/// Opaque configuration handle.
pub struct DagflConfig(RunConfig);

/// Opaque handle to a finished run.
pub struct DagflRun(RunOutput);

/// # Safety
/// `ptr` must be non-NULL and point to a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char) -> Result<&'a str, DagflStatus> {
    if ptr.is_null() {
        set_error("NULL string argument");
        return Err(DagflStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        DagflStatus::InvalidArgument
    })
}

fn take_string(s: String) -> *mut c_char {
    CString::new(s).unwrap_or_default().into_raw()
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn dagfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Last error message for this thread, or NULL when no error is recorded.
/// Free the result with `dagfl_string_free`.
#[no_mangle]
pub extern "C" fn dagfl_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a dagfl function returning an owned string
/// and not freed before. NULL is accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn dagfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a configuration with every knob at its default.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_config_default(out: *mut *mut DagflConfig) -> DagflStatus {
    if out.is_null() {
        return fail(DagflStatus::NullArgument, "NULL out pointer");
    }
    let config = Box::new(DagflConfig(RunConfig::default()));
    *out = Box::into_raw(config);
    DagflStatus::Ok
}

/// Loads a flat `key = value` configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_config_load(
    path: *const c_char,
    out: *mut *mut DagflConfig,
) -> DagflStatus {
    if out.is_null() {
        return fail(DagflStatus::NullArgument, "NULL out pointer");
    }
    let path = match required_str(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match RunConfig::from_file(std::path::Path::new(path)) {
        Ok(config) => {
            *out = Box::into_raw(Box::new(DagflConfig(config)));
            DagflStatus::Ok
        }
        Err(e) => fail(DagflStatus::ConfigError, e),
    }
}

/// # Safety
/// `config` must be a live handle from `dagfl_config_*`.
#[no_mangle]
pub unsafe extern "C" fn dagfl_config_set_seed(config: *mut DagflConfig, seed: u64) -> DagflStatus {
    match config.as_mut() {
        Some(c) => {
            c.0.seed = seed;
            DagflStatus::Ok
        }
        None => fail(DagflStatus::NullArgument, "NULL config"),
    }
}

/// Selects the coordination policy by name (`dag-afl`, `centralized`,
/// `independent`, `sync-fedavg`, `pure-async`).
///
/// # Safety
/// `config` must be a live handle; `policy` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dagfl_config_set_policy(
    config: *mut DagflConfig,
    policy: *const c_char,
) -> DagflStatus {
    let Some(c) = config.as_mut() else {
        return fail(DagflStatus::NullArgument, "NULL config");
    };
    let name = match required_str(policy) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match Policy::from_name(name) {
        Some(p) => {
            c.0.policy = p;
            DagflStatus::Ok
        }
        None => fail(
            DagflStatus::InvalidArgument,
            format!("unknown policy `{name}`"),
        ),
    }
}

/// # Safety
/// `config` must be a live handle or NULL (ignored).
#[no_mangle]
pub unsafe extern "C" fn dagfl_config_free(config: *mut DagflConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Executes the configured run and hands back a result handle.
///
/// # Safety
/// `config` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run(
    config: *const DagflConfig,
    out: *mut *mut DagflRun,
) -> DagflStatus {
    if out.is_null() {
        return fail(DagflStatus::NullArgument, "NULL out pointer");
    }
    let Some(config) = config.as_ref() else {
        return fail(DagflStatus::NullArgument, "NULL config");
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        sim::run_policy(&config.0, config.0.policy)
    }));
    match result {
        Ok(Ok(output)) => {
            *out = Box::into_raw(Box::new(DagflRun(output)));
            DagflStatus::Ok
        }
        Ok(Err(e)) => fail(DagflStatus::RuntimeError, e),
        Err(_) => fail(DagflStatus::RuntimeError, "panic in simulator"),
    }
}

/// # Safety
/// `run` must be a live handle from `dagfl_run`.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_final_accuracy(run: *const DagflRun) -> f64 {
    run.as_ref()
        .map_or(f64::NAN, |r| r.0.summary.final_mean_accuracy)
}

/// # Safety
/// `run` must be a live handle from `dagfl_run`.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_uploads_per_sec(run: *const DagflRun) -> f64 {
    run.as_ref()
        .map_or(f64::NAN, |r| r.0.summary.uploads_per_sec)
}

/// # Safety
/// `run` must be a live handle from `dagfl_run`.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_mean_latency(run: *const DagflRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.summary.mean_latency)
}

/// Writes the time-to-target into `out` and returns true, or returns false
/// when the target was never reached (or no target was configured).
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_time_to_target(run: *const DagflRun, out: *mut f64) -> bool {
    let Some(r) = run.as_ref() else { return false };
    match (r.0.summary.time_to_target, out.as_mut()) {
        (Some(t), Some(slot)) => {
            *slot = t;
            true
        }
        _ => false,
    }
}

/// Summary metrics as a JSON string; free with `dagfl_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_summary_json(
    run: *const DagflRun,
    out: *mut *mut c_char,
) -> DagflStatus {
    if out.is_null() {
        return fail(DagflStatus::NullArgument, "NULL out pointer");
    }
    let Some(r) = run.as_ref() else {
        return fail(DagflStatus::NullArgument, "NULL run");
    };
    *out = take_string(r.0.summary.to_json());
    DagflStatus::Ok
}

/// The JSON-lines ledger export; free with `dagfl_string_free`. Baseline
/// policies have no ledger and yield `NotAvailable`.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_ledger_jsonl(
    run: *const DagflRun,
    out: *mut *mut c_char,
) -> DagflStatus {
    if out.is_null() {
        return fail(DagflStatus::NullArgument, "NULL out pointer");
    }
    let Some(r) = run.as_ref() else {
        return fail(DagflStatus::NullArgument, "NULL run");
    };
    match &r.0.ledger {
        Some(ledger) => {
            *out = take_string(ledger.export_jsonl());
            DagflStatus::Ok
        }
        None => fail(DagflStatus::NotAvailable, "this policy produces no ledger"),
    }
}

/// The replay event log as JSON lines; free with `dagfl_string_free`.
///
/// # Safety
/// `run` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_replay_jsonl(
    run: *const DagflRun,
    out: *mut *mut c_char,
) -> DagflStatus {
    if out.is_null() {
        return fail(DagflStatus::NullArgument, "NULL out pointer");
    }
    let Some(r) = run.as_ref() else {
        return fail(DagflStatus::NullArgument, "NULL run");
    };
    *out = take_string(sim::replay_jsonl(&r.0.replay));
    DagflStatus::Ok
}

/// # Safety
/// `run` must be a live handle or NULL (ignored).
#[no_mangle]
pub unsafe extern "C" fn dagfl_run_free(run: *mut DagflRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Verifies a ledger export file against a trusted tip digest.
///
/// Returns `Ok` when the reconstructed path is accepted. On
/// `VerificationFailed`, `tampered_at` (when non-NULL) receives the id of
/// the first inconsistent node, or `UINT64_MAX` when the tip digest is not
/// present in the export at all.
///
/// # Safety
/// `export_path` and `tip_digest_hex` must be NUL-terminated strings;
/// `tampered_at` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dagfl_verify_export(
    export_path: *const c_char,
    tip_digest_hex: *const c_char,
    tampered_at: *mut u64,
) -> DagflStatus {
    let path = match required_str(export_path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let hex = match required_str(tip_digest_hex) {
        Ok(h) => h,
        Err(status) => return status,
    };
    let Some(digest) = Digest::from_hex(hex) else {
        return fail(
            DagflStatus::InvalidArgument,
            "tip digest must be 64 hex characters",
        );
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(DagflStatus::RuntimeError, e),
    };
    let records = match parse_export(&text) {
        Ok(r) => r,
        Err(e) => return fail(DagflStatus::RuntimeError, e),
    };
    let chain = match path_from_export(&records, &digest) {
        Ok(c) => c,
        Err(e) => {
            if let Some(slot) = tampered_at.as_mut() {
                *slot = u64::MAX;
            }
            return fail(DagflStatus::VerificationFailed, e);
        }
    };
    match verify_path(&chain, &digest) {
        Ok(Verdict::Accepted) => DagflStatus::Ok,
        Ok(Verdict::TamperedAt(id)) => {
            if let Some(slot) = tampered_at.as_mut() {
                *slot = id.0;
            }
            fail(
                DagflStatus::VerificationFailed,
                format!("tampered at node {id}"),
            )
        }
        Err(e) => fail(DagflStatus::RuntimeError, e),
    }
}
