//! C ABI for the recognition laboratory: opaque handles, integer status
//! codes, and a thread-local last-error message. Every entry point catches
//! panics, so unwinding never crosses the FFI boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use tgasr::data::{load_dataset, Dataset};
use tgasr::error::TgError;
use tgasr::eval::{cer, evaluate, extract_gates};
use tgasr::experiment::{run_experiment, verify_run, Preset};
use tgasr::model::{load_checkpoint, ModelCheckpoint};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BadUtf8 = 3,
    ConfigError = 4,
    FormatError = 5,
    ChecksumError = 6,
    NumericError = 7,
    IoError = 8,
    Diverged = 9,
    Panic = 10,
}

/// Edit-operation counts for one reference/hypothesis pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TgCerCounts {
    pub cer: f64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub ref_chars: u64,
}

/// Opaque dataset handle.
pub struct TgDataset(Dataset);

/// Opaque checkpoint handle.
pub struct TgCheckpoint(ModelCheckpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &TgError) -> TgStatus {
    match err {
        TgError::Dim(_) | TgError::Invalid(_) => TgStatus::InvalidArgument,
        TgError::NonFinite(_) | TgError::Graph(_) => TgStatus::NumericError,
        TgError::Config(_) => TgStatus::ConfigError,
        TgError::Format(_) => TgStatus::FormatError,
        TgError::Checksum(_) => TgStatus::ChecksumError,
        TgError::Diverged { .. } => TgStatus::Diverged,
        TgError::Io(_) => TgStatus::IoError,
        TgError::Phase { source, .. } => status_of(source),
    }
}

fn fail(err: TgError) -> TgStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

fn guarded<F: FnOnce() -> TgStatus>(f: F) -> TgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            TgStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, TgStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(TgStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(TgStatus::BadUtf8)
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, TgStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(TgStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error("string is not valid UTF-8");
            Err(TgStatus::BadUtf8)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent error on this thread. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn tg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by a `tg_*` function that
/// documents `tg_string_free`, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ── Dataset ─────────────────────────────────────────────────────────

/// Load a dataset container. On success writes a handle that must be
/// released with `tg_dataset_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_load(
    path: *const c_char,
    out: *mut *mut TgDataset,
) -> TgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output handle");
            return TgStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_dataset(path) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(TgDataset(ds)));
                TgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a dataset handle.
///
/// # Safety
/// `ds` must come from `tg_dataset_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_free(ds: *mut TgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Utterance counts of the two splits.
///
/// # Safety
/// All pointers must be valid; `ds` must come from `tg_dataset_load`.
#[no_mangle]
pub unsafe extern "C" fn tg_dataset_counts(
    ds: *const TgDataset,
    train: *mut u64,
    test: *mut u64,
) -> TgStatus {
    guarded(|| {
        if ds.is_null() || train.is_null() || test.is_null() {
            set_error("null argument");
            return TgStatus::NullArgument;
        }
        *train = (*ds).0.train.len() as u64;
        *test = (*ds).0.test.len() as u64;
        TgStatus::Ok
    })
}

// ── Checkpoint ──────────────────────────────────────────────────────

/// Load a checkpoint. On success writes a handle that must be released with
/// `tg_checkpoint_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tg_checkpoint_load(
    path: *const c_char,
    out: *mut *mut TgCheckpoint,
) -> TgStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output handle");
            return TgStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(TgCheckpoint(c)));
                TgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a checkpoint handle.
///
/// # Safety
/// `ckpt` must come from `tg_checkpoint_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tg_checkpoint_free(ckpt: *mut TgCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Training stage of a checkpoint (1 or 2).
///
/// # Safety
/// Pointers must be valid; `ckpt` must come from `tg_checkpoint_load`.
#[no_mangle]
pub unsafe extern "C" fn tg_checkpoint_stage(
    ckpt: *const TgCheckpoint,
    stage: *mut u8,
) -> TgStatus {
    guarded(|| {
        if ckpt.is_null() || stage.is_null() {
            set_error("null argument");
            return TgStatus::NullArgument;
        }
        *stage = (*ckpt).0.stage.as_u8();
        TgStatus::Ok
    })
}

// ── Metrics and analysis ────────────────────────────────────────────

/// Token error rate with edit-operation decomposition.
///
/// # Safety
/// `reference` and `hypothesis` must point to `ref_len` / `hyp_len` valid
/// u32 tokens; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tg_cer(
    reference: *const u32,
    ref_len: usize,
    hypothesis: *const u32,
    hyp_len: usize,
    out: *mut TgCerCounts,
) -> TgStatus {
    guarded(|| {
        if out.is_null() || reference.is_null() || (hypothesis.is_null() && hyp_len > 0) {
            set_error("null argument");
            return TgStatus::NullArgument;
        }
        let r = std::slice::from_raw_parts(reference, ref_len);
        let h = if hyp_len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(hypothesis, hyp_len)
        };
        match cer(r, h) {
            Ok(e) => {
                *out = TgCerCounts {
                    cer: e.cer,
                    substitutions: e.substitutions as u64,
                    deletions: e.deletions as u64,
                    insertions: e.insertions as u64,
                    ref_chars: e.ref_chars as u64,
                };
                TgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Teacher-forcing corpus CER of a checkpoint over a dataset split
/// ("train" or "test").
///
/// # Safety
/// Handles must come from the corresponding load functions; `split` must be
/// NUL-terminated; `out_cer` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tg_evaluate(
    ckpt: *const TgCheckpoint,
    ds: *const TgDataset,
    split: *const c_char,
    out_cer: *mut f64,
) -> TgStatus {
    guarded(|| {
        if ckpt.is_null() || ds.is_null() || out_cer.is_null() {
            set_error("null argument");
            return TgStatus::NullArgument;
        }
        let split = match str_arg(split) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match evaluate(&(*ckpt).0, &(*ds).0, split) {
            Ok(report) => {
                *out_cer = report.cer;
                TgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Gate report of a gated stage-2 checkpoint as a CSV string
/// (layer,gate,value). Free with `tg_string_free`.
///
/// # Safety
/// `ckpt` must come from `tg_checkpoint_load`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tg_gate_report_csv(
    ckpt: *const TgCheckpoint,
    out: *mut *mut c_char,
) -> TgStatus {
    guarded(|| {
        if ckpt.is_null() || out.is_null() {
            set_error("null argument");
            return TgStatus::NullArgument;
        }
        match extract_gates(&(*ckpt).0) {
            Ok(report) => {
                let csv = report.to_csv().replace('\0', " ");
                match CString::new(csv) {
                    Ok(c) => {
                        *out = c.into_raw();
                        TgStatus::Ok
                    }
                    Err(_) => {
                        set_error("gate report contained an interior NUL");
                        TgStatus::FormatError
                    }
                }
            }
            Err(e) => fail(e),
        }
    })
}

// ── Experiment driving ──────────────────────────────────────────────

/// Run a full experiment from a config file into an output directory.
/// `preset` is one of baseline/ablation/sweep/selection; `seed_override < 0`
/// keeps the config's seed.
///
/// # Safety
/// Strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tg_run_experiment(
    config_path: *const c_char,
    preset: *const c_char,
    out_dir: *const c_char,
    seed_override: i64,
) -> TgStatus {
    guarded(|| {
        let config_path = match path_arg(config_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let preset = match str_arg(preset) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let out_dir = match path_arg(out_dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let preset = match Preset::parse(preset) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let cfg = match tgasr::config::ExperimentConfig::parse_file(config_path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let cfg = if seed_override >= 0 {
            cfg.with_seed(seed_override as u64)
        } else {
            cfg
        };
        match run_experiment(&cfg, preset, out_dir) {
            Ok(()) => TgStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Re-check every artifact checksum in a run directory against its manifest.
///
/// # Safety
/// `run_dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tg_verify_run(run_dir: *const c_char) -> TgStatus {
    guarded(|| {
        let dir = match path_arg(run_dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match verify_run(dir) {
            Ok(report) if report.ok() => TgStatus::Ok,
            Ok(report) => {
                set_error(&format!(
                    "verification failed ({} issue(s)): {}",
                    report.failures.len(),
                    report.failures.join("; ")
                ));
                TgStatus::ChecksumError
            }
            Err(e) => fail(e),
        }
    })
}
