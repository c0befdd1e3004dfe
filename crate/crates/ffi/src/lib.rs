//! C ABI over `tabtext`.
//!
//! Tables and checkpoints cross the boundary as opaque handles owned by the
//! caller and released with the matching `*_free`. Every fallible call returns
//! a [`TabtextStatus`]; on failure [`tabtext_last_error`] describes the cause.
//! Strings handed out by the library are freed with [`tabtext_string_free`].
//! Options are passed as JSON text with the same keys as the CLI config file;
//! a null pointer means defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde_json::Value;
use tabtext::bench::{self, BenchError, GeneratorSpec};
use tabtext::eval::{self, EvalError};
use tabtext::lm::{self, LmError};
use tabtext::sampler::{self, SampleError};
use tabtext::table::{self, CsvOptions, TableError};
use tabtext::{Checkpoint, LmConfig, SampleSpec, Table, TrainConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabtextStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed table, or tables whose schemas disagree.
    Schema = 4,
    /// Invalid options or an unusable request.
    Config = 5,
    /// Training stopped on a non-finite loss.
    TrainingAborted = 6,
    /// Sampling gave up before producing enough valid rows.
    BudgetExhausted = 7,
    Evaluation = 8,
    OutOfRange = 9,
    /// A bug inside the library; the handle arguments are left untouched.
    Panic = 10,
}

/// Opaque table handle.
pub struct TabtextTable(Table);

/// Opaque trained-model handle.
pub struct TabtextCheckpoint(Checkpoint);

/// Distance-to-closest-record statistics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TabtextDcrSummary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub zero_fraction: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(TabtextStatus, String);

type Result<T> = std::result::Result<T, Fail>;

impl From<TableError> for Fail {
    fn from(e: TableError) -> Self {
        let status = if matches!(e, TableError::Io(_)) { TabtextStatus::Io } else { TabtextStatus::Schema };
        Fail(status, e.to_string())
    }
}

impl From<LmError> for Fail {
    fn from(e: LmError) -> Self {
        let status = match e {
            LmError::NonFiniteLoss { .. } => TabtextStatus::TrainingAborted,
            LmError::Io(_) => TabtextStatus::Io,
            LmError::Table(_) => TabtextStatus::Schema,
            _ => TabtextStatus::Config,
        };
        Fail(status, e.to_string())
    }
}

impl From<SampleError> for Fail {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::AttemptBudgetExhausted { .. } => Fail(TabtextStatus::BudgetExhausted, e.to_string()),
            SampleError::Lm(e) => e.into(),
            e => Fail(TabtextStatus::Config, e.to_string()),
        }
    }
}

impl From<EvalError> for Fail {
    fn from(e: EvalError) -> Self {
        let status =
            if matches!(e, EvalError::SchemaMismatch) { TabtextStatus::Schema } else { TabtextStatus::Evaluation };
        Fail(status, e.to_string())
    }
}

impl From<BenchError> for Fail {
    fn from(e: BenchError) -> Self {
        Fail(TabtextStatus::Config, e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(TabtextStatus::Config, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<()>) -> TabtextStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TabtextStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {what}"));
            TabtextStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TabtextStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(TabtextStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn optional_json(p: *const c_char, what: &str) -> Result<Option<Value>> {
    if p.is_null() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(text(p, what)?)?))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn new_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

fn sample_spec(v: Option<Value>) -> Result<SampleSpec> {
    Ok(v.map(serde_json::from_value).transpose()?.unwrap_or_default())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tabtext_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tabtext_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tabtext_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a CSV file with a header row and infers its schema.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_load_csv(path: *const c_char, out: *mut *mut TabtextTable) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = table::load_csv(text(path, "path")?, CsvOptions::default())?;
        *out = Box::into_raw(Box::new(TabtextTable(t)));
        Ok(())
    })
}

/// Writes the table as CSV with a header row.
///
/// # Safety
/// `table` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_save_csv(table: *const TabtextTable, path: *const c_char) -> TabtextStatus {
    guard(|| {
        handle(table, "table")?.0.save_csv(text(path, "path")?)?;
        Ok(())
    })
}

/// Row count; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_rows(table: *const TabtextTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// Feature count; 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_cols(table: *const TabtextTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.schema.len())
}

/// Copies one cell (empty when missing) into a new string.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_cell(
    table: *const TabtextTable,
    row: usize,
    col: usize,
    out: *mut *mut c_char,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = &handle(table, "table")?.0;
        let cell = t.rows.get(row).and_then(|r| r.cells.get(col)).ok_or_else(|| {
            Fail(TabtextStatus::OutOfRange, format!("cell ({row}, {col}) outside {}×{}", t.len(), t.schema.len()))
        })?;
        *out = new_string(cell);
        Ok(())
    })
}

/// Copies a feature name into a new string.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_feature_name(
    table: *const TabtextTable,
    col: usize,
    out: *mut *mut c_char,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = &handle(table, "table")?.0;
        let f = t
            .schema
            .features
            .get(col)
            .ok_or_else(|| Fail(TabtextStatus::OutOfRange, format!("feature {col} outside {}", t.schema.len())))?;
        *out = new_string(&f.name);
        Ok(())
    })
}

/// Releases a table. Null is ignored.
///
/// # Safety
/// `table` must be null or a live handle, and is dangling afterwards.
#[no_mangle]
pub unsafe extern "C" fn tabtext_table_free(table: *mut TabtextTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Trains a model. `config_json` may be null or hold `"model"` and `"train"`
/// objects with the CLI config keys.
///
/// # Safety
/// `table` must be a live handle, `config_json` null or nul-terminated, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabtext_train(
    table: *const TabtextTable,
    config_json: *const c_char,
    out: *mut *mut TabtextCheckpoint,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = &handle(table, "table")?.0;
        let mut model = LmConfig::default();
        let mut train = TrainConfig::default();
        if let Some(v) = optional_json(config_json, "config_json")? {
            let Value::Object(map) = v else {
                return Err(Fail(TabtextStatus::Config, "config must be a JSON object".into()));
            };
            for (key, value) in map {
                match key.as_str() {
                    "model" => model = serde_json::from_value(value)?,
                    "train" => train = serde_json::from_value(value)?,
                    other => return Err(Fail(TabtextStatus::Config, format!("unknown config section '{other}'"))),
                }
            }
        }
        let ck = lm::train(t, &model, &train)?;
        *out = Box::into_raw(Box::new(TabtextCheckpoint(ck)));
        Ok(())
    })
}

/// # Safety
/// `path` must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabtext_checkpoint_load(
    path: *const c_char,
    out: *mut *mut TabtextCheckpoint,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ck = lm::load(text(path, "path")?)?;
        *out = Box::into_raw(Box::new(TabtextCheckpoint(ck)));
        Ok(())
    })
}

/// # Safety
/// `ckpt` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn tabtext_checkpoint_save(ckpt: *const TabtextCheckpoint, path: *const c_char) -> TabtextStatus {
    guard(|| {
        lm::save(&handle(ckpt, "ckpt")?.0, text(path, "path")?)?;
        Ok(())
    })
}

/// Loads a CSV whose header must match the checkpoint's features, typically
/// the input to [`tabtext_impute`].
///
/// # Safety
/// `ckpt` must be a live handle, `path` nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tabtext_checkpoint_load_table(
    ckpt: *const TabtextCheckpoint,
    path: *const c_char,
    out: *mut *mut TabtextTable,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = table::load_csv_with_schema(text(path, "path")?, &handle(ckpt, "ckpt")?.0.schema)?;
        *out = Box::into_raw(Box::new(TabtextTable(t)));
        Ok(())
    })
}

/// Releases a checkpoint. Null is ignored.
///
/// # Safety
/// `ckpt` must be null or a live handle, and is dangling afterwards.
#[no_mangle]
pub unsafe extern "C" fn tabtext_checkpoint_free(ckpt: *mut TabtextCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Draws rows. `spec_json` uses the keys of the config file's `"sample"`
/// section. When `report_json` is non-null it receives a string with the
/// attempt counts and rejection reasons.
///
/// # Safety
/// `ckpt` must be a live handle, `spec_json` null or nul-terminated, `out`
/// valid and `report_json` null or valid.
#[no_mangle]
pub unsafe extern "C" fn tabtext_sample(
    ckpt: *const TabtextCheckpoint,
    spec_json: *const c_char,
    out: *mut *mut TabtextTable,
    report_json: *mut *mut c_char,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = sample_spec(optional_json(spec_json, "spec_json")?)?;
        let report = sampler::sample(&handle(ckpt, "ckpt")?.0, &spec)?;
        if let Some(r) = report_json.as_mut() {
            *r = new_string(&report.summary().to_string());
        }
        *out = Box::into_raw(Box::new(TabtextTable(report.rows)));
        Ok(())
    })
}

/// Fills the missing cells of `partial`; observed cells are kept verbatim.
///
/// # Safety
/// `ckpt` and `partial` must be live handles, `spec_json` null or
/// nul-terminated, and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tabtext_impute(
    ckpt: *const TabtextCheckpoint,
    partial: *const TabtextTable,
    spec_json: *const c_char,
    out: *mut *mut TabtextTable,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = sample_spec(optional_json(spec_json, "spec_json")?)?;
        let report = sampler::impute(&handle(ckpt, "ckpt")?.0, &handle(partial, "partial")?.0, &spec)?;
        *out = Box::into_raw(Box::new(TabtextTable(report.table)));
        Ok(())
    })
}

/// Distance from each synthetic row to its closest training row. When
/// `distances` is non-null it must hold one slot per synthetic row.
///
/// # Safety
/// Both tables must be live handles, `distances` null or large enough, and
/// `summary` valid.
#[no_mangle]
pub unsafe extern "C" fn tabtext_dcr(
    synthetic: *const TabtextTable,
    train: *const TabtextTable,
    normalized: bool,
    distances: *mut f64,
    summary: *mut TabtextDcrSummary,
) -> TabtextStatus {
    guard(|| {
        let summary = out_ptr(summary, "summary")?;
        let r = eval::dcr(&handle(synthetic, "synthetic")?.0, &handle(train, "train")?.0, normalized)?;
        if !distances.is_null() {
            ptr::copy_nonoverlapping(r.distances.as_ptr(), distances, r.distances.len());
        }
        *summary = TabtextDcrSummary { min: r.min, median: r.median, mean: r.mean, zero_fraction: r.zero_fraction };
        Ok(())
    })
}

/// Generates a benchmark table from a generator spec in JSON.
///
/// # Safety
/// `spec_json` must be nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tabtext_bench_generate(
    spec_json: *const c_char,
    out: *mut *mut TabtextTable,
) -> TabtextStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec: GeneratorSpec = serde_json::from_str(text(spec_json, "spec_json")?)?;
        *out = Box::into_raw(Box::new(TabtextTable(bench::generate(&spec)?)));
        Ok(())
    })
}
