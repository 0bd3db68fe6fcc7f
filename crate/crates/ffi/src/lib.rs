//! C ABI over the tabsynth library.
//!
//! Checkpoints are opaque handles. Every fallible call returns a
//! [`TabsynthStatus`]; on failure the message is available from
//! [`tabsynth_last_error`] on the same thread. Strings returned through out
//! pointers are owned by the caller and released with [`tabsynth_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use libc::{c_char, c_double, size_t};
use tabsynth::cli::{load_source, CliError};
use tabsynth::config::{parse_condition, RunConfig};
use tabsynth::sampler::{SampleError, SamplingSpec};
use tabsynth::store::{train_new, Checkpoint, StoreError};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabsynthStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    IncompatibleVersion = 5,
    Failed = 6,
    Panic = 7,
}

/// Opaque trained model plus its registry, schema and codec settings.
pub struct TabsynthCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: TabsynthStatus, msg: impl Into<String>) -> TabsynthStatus {
    set_error(msg);
    status
}

fn store_status(e: &StoreError) -> TabsynthStatus {
    match e {
        StoreError::Io { .. } => TabsynthStatus::Io,
        StoreError::Corrupt(_) => TabsynthStatus::CorruptCheckpoint,
        StoreError::IncompatibleVersion { .. } => TabsynthStatus::IncompatibleVersion,
        StoreError::Invalid(_) | StoreError::Sample(SampleError::Spec(_)) => TabsynthStatus::InvalidArgument,
        _ => TabsynthStatus::Failed,
    }
}

fn store_fail(e: StoreError) -> TabsynthStatus {
    fail(store_status(&e), e.to_string())
}

fn cli_fail(e: CliError) -> TabsynthStatus {
    let status = match &e {
        CliError::Usage(_) | CliError::Config(_) => TabsynthStatus::InvalidArgument,
        CliError::Stage { .. } => TabsynthStatus::Failed,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning a panic into [`TabsynthStatus::Panic`].
fn guard(f: impl FnOnce() -> TabsynthStatus) -> TabsynthStatus {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TabsynthStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TabsynthStatus> {
    if p.is_null() {
        return Err(fail(TabsynthStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(TabsynthStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, TabsynthStatus> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

fn out_string(text: String, out: *mut *mut c_char) -> TabsynthStatus {
    match CString::new(text) {
        Ok(s) => {
            // SAFETY: callers check `out` for null before producing text.
            unsafe { *out = s.into_raw() };
            TabsynthStatus::Ok
        }
        Err(_) => fail(TabsynthStatus::Failed, "output contains an interior NUL byte"),
    }
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tabsynth_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tabsynth_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file into a new handle written to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_checkpoint_load(
    path: *const c_char,
    out: *mut *mut TabsynthCheckpoint,
) -> TabsynthStatus {
    guard(|| {
        if out.is_null() {
            return fail(TabsynthStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TabsynthCheckpoint { inner }));
                TabsynthStatus::Ok
            }
            Err(e) => store_fail(e),
        }
    })
}

/// Parses a checkpoint from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_checkpoint_from_bytes(
    data: *const u8,
    len: size_t,
    out: *mut *mut TabsynthCheckpoint,
) -> TabsynthStatus {
    guard(|| {
        if out.is_null() || data.is_null() {
            return fail(TabsynthStatus::NullPointer, "data and out must be non-null");
        }
        *out = ptr::null_mut();
        let bytes = std::slice::from_raw_parts(data, len);
        match Checkpoint::from_bytes(bytes) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TabsynthCheckpoint { inner }));
                TabsynthStatus::Ok
            }
            Err(e) => store_fail(e),
        }
    })
}

/// # Safety
/// `handle` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_checkpoint_save(
    handle: *const TabsynthCheckpoint,
    path: *const c_char,
) -> TabsynthStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(TabsynthStatus::NullPointer, "handle is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match h.inner.save(Path::new(path)) {
            Ok(()) => TabsynthStatus::Ok,
            Err(e) => store_fail(e),
        }
    })
}

/// # Safety
/// `handle` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_checkpoint_free(handle: *mut TabsynthCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Vocabulary size of the checkpoint's registry, or 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_checkpoint_vocab_size(handle: *const TabsynthCheckpoint) -> size_t {
    handle.as_ref().map_or(0, |h| h.inner.registry.len())
}

/// Column names of the training schema joined by commas.
///
/// # Safety
/// `handle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_checkpoint_columns(
    handle: *const TabsynthCheckpoint,
    out: *mut *mut c_char,
) -> TabsynthStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(TabsynthStatus::NullPointer, "handle is null");
        };
        if out.is_null() {
            return fail(TabsynthStatus::NullPointer, "out is null");
        }
        let Some(schema) = &h.inner.schema else {
            return fail(TabsynthStatus::InvalidArgument, "checkpoint carries no schema");
        };
        let names: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
        out_string(names.join(","), out)
    })
}

/// Samples `n_rows` rows and writes them as CSV with a header to `out`.
/// `condition` is NULL or `"Col=value; Col2=value"`. A non-positive
/// temperature selects greedy decoding. Fewer rows than requested are
/// returned when the attempt cap is reached.
///
/// # Safety
/// `handle` must be a live handle; `condition` NULL or NUL-terminated;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_sample_csv(
    handle: *const TabsynthCheckpoint,
    n_rows: size_t,
    seed: u64,
    temperature: c_double,
    condition: *const c_char,
    out: *mut *mut c_char,
) -> TabsynthStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(TabsynthStatus::NullPointer, "handle is null");
        };
        if out.is_null() {
            return fail(TabsynthStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let condition = match opt_str_arg(condition, "condition") {
            Ok(c) => c.map(parse_condition).transpose(),
            Err(s) => return s,
        };
        let condition = match condition {
            Ok(c) => c.unwrap_or_default(),
            Err(m) => return fail(TabsynthStatus::InvalidArgument, m),
        };
        let spec = SamplingSpec {
            n_rows,
            seed,
            temperature: if temperature > 0.0 { temperature } else { 1.0 },
            greedy: temperature <= 0.0,
            condition,
            ..SamplingSpec::default()
        };
        match h.inner.synthesize(&spec) {
            Ok((rows, _)) => out_string(rows.to_csv_string(b','), out),
            Err(e) => store_fail(e),
        }
    })
}

/// Trains a new model from INI configuration text and writes the handle to
/// `out`. Relative data paths resolve against `base_dir` when it is given.
///
/// # Safety
/// `config` must be NUL-terminated; `base_dir` NULL or NUL-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn tabsynth_train(
    config: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut TabsynthCheckpoint,
) -> TabsynthStatus {
    guard(|| {
        if out.is_null() {
            return fail(TabsynthStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let (text, base) = match (str_arg(config, "config"), opt_str_arg(base_dir, "base_dir")) {
            (Ok(t), Ok(b)) => (t, b.map(PathBuf::from)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let cfg = match RunConfig::parse(text) {
            Ok(c) => c,
            Err(e) => return fail(TabsynthStatus::InvalidArgument, e.to_string()),
        };
        let Some(source) = &cfg.data.source else {
            return fail(TabsynthStatus::InvalidArgument, "no data: set data.path or data.dataset");
        };
        let table = match load_source(source, &cfg.data, base.as_deref()) {
            Ok(t) => t,
            Err(e) => return cli_fail(e),
        };
        match train_new(&table, &source.name(), &cfg.run) {
            Ok((inner, _)) => {
                *out = Box::into_raw(Box::new(TabsynthCheckpoint { inner }));
                TabsynthStatus::Ok
            }
            Err(e) => store_fail(e),
        }
    })
}
