//! C ABI for the fedcorr simulator.
//!
//! Configurations and results are opaque handles created and freed by this
//! library. Every fallible function returns an [`FcStatus`]; on failure a
//! description is available from [`fc_last_error`] on the same thread.
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with [`fc_string_free`]. Panics never cross the
//! boundary; they are reported as `FC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fedcorr::config::ExperimentConfig;
use fedcorr::gmm::{fit_gmm2, GmmOptions};
use fedcorr::lid::{lid_mle, NeighborDistances};
use fedcorr::protocol::{planned_comm_cost, prepare, run_prepared};
use fedcorr::{runner, Error, ExperimentResult};

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Input = 4,
    Io = 5,
    Divergence = 6,
    Degenerate = 7,
    OutOfRange = 8,
    Panic = 99,
}

/// Experiment configuration handle.
pub struct FcConfig(ExperimentConfig);

/// Experiment result handle.
pub struct FcResult(ExperimentResult);

/// A fitted two-component Gaussian mixture.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FcGmmFit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub log_likelihood: f64,
    pub n_iters: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(FcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Parameter(_) => FcStatus::InvalidArgument,
            Error::DegenerateGeometry { .. } => FcStatus::Degenerate,
            Error::Divergence { .. } => FcStatus::Divergence,
            Error::Config { .. } => FcStatus::Config,
            Error::Input { .. } => FcStatus::Input,
            Error::Io { .. } => FcStatus::Io,
            Error::Context { .. } => FcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            FcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            FcStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|_| Failure(FcStatus::InvalidArgument, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message describing the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A configuration holding every default.
#[no_mangle]
pub extern "C" fn fc_config_default() -> *mut FcConfig {
    Box::into_raw(Box::new(FcConfig(ExperimentConfig::default())))
}

/// Parses and validates a TOML configuration document.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_config_from_toml(toml: *const c_char, out: *mut *mut FcConfig) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = read_str(toml, "toml")?;
        let cfg = ExperimentConfig::from_toml_str(text)?;
        *out = Box::into_raw(Box::new(FcConfig(cfg)));
        Ok(())
    })
}

/// Sets one key from its textual value, as the command line would. Only the
/// value's type is checked here; cross-field rules are checked by
/// [`fc_config_validate`] and at run time.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fc_config_set(config: *mut FcConfig, key: *const c_char, value: *const c_char) -> FcStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let key = read_str(key, "key")?;
        let value = read_str(value, "value")?;
        cfg.0.set(key, value)?;
        Ok(())
    })
}

/// Checks every range and cross-field rule.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_config_validate(config: *const FcConfig) -> FcStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        cfg.0.validate()?;
        Ok(())
    })
}

/// The resolved configuration as TOML.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_config_to_toml(config: *const FcConfig, out: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        write_string(out, cfg.0.to_toml_string())
    })
}

/// Hex SHA-256 identifying the configuration.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_config_hash(config: *const FcConfig, out: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        write_string(out, cfg.0.hash())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fc_config_free(config: *mut FcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured mode in memory, writing no files.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_run(config: *const FcConfig, out: *mut *mut FcResult) -> FcStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let prepared = prepare(&cfg.0)?;
        let result = run_prepared(&prepared)?;
        *out = Box::into_raw(Box::new(FcResult(result)));
        Ok(())
    })
}

/// Runs the configured mode and writes the output files into the
/// configuration's `output_dir`.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_run_and_write(config: *const FcConfig, out: *mut *mut FcResult) -> FcStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let written = runner::run(&cfg.0)?;
        *out = Box::into_raw(Box::new(FcResult(written.result)));
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `result` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fc_result_free(result: *mut FcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

unsafe fn result_ref<'a>(result: *const FcResult) -> Result<&'a ExperimentResult, Failure> {
    result.as_ref().map(|r| &r.0).ok_or_else(|| null("result"))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Test accuracy of the final global model.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_final_accuracy(result: *const FcResult, out: *mut f64) -> FcStatus {
    guard(|| put(out, result_ref(result)?.final_accuracy))
}

/// Best test accuracy over all rounds.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_best_accuracy(result: *const FcResult, out: *mut f64) -> FcStatus {
    guard(|| put(out, result_ref(result)?.best_accuracy))
}

/// Total communication cost (cumulative participating clients).
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_comm_cost(result: *const FcResult, out: *mut usize) -> FcStatus {
    guard(|| put(out, result_ref(result)?.comm_cost))
}

/// Number of communication rounds.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_n_rounds(result: *const FcResult, out: *mut usize) -> FcStatus {
    guard(|| put(out, result_ref(result)?.rounds.len()))
}

/// Test accuracy after round `index` (0-based).
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_round_accuracy(result: *const FcResult, index: usize, out: *mut f64) -> FcStatus {
    guard(|| {
        let r = result_ref(result)?;
        let round = r
            .rounds
            .get(index)
            .ok_or_else(|| Failure(FcStatus::OutOfRange, format!("round {index} of {}", r.rounds.len())))?;
        put(out, round.test_accuracy.unwrap_or(f64::NAN))
    })
}

/// Number of clients.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_n_clients(result: *const FcResult, out: *mut usize) -> FcStatus {
    guard(|| put(out, result_ref(result)?.estimated_noise.len()))
}

/// Copies per-client estimated noise levels into `out[0..capacity]`; writes
/// the client count to `written`. Fails with `FC_STATUS_OUT_OF_RANGE` if
/// `capacity` is too small.
///
/// # Safety
/// `result` must be a live handle; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_result_estimated_noise(
    result: *const FcResult,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> FcStatus {
    guard(|| {
        let values = &result_ref(result)?.estimated_noise;
        put(written, values.len())?;
        if capacity < values.len() {
            return Err(Failure(
                FcStatus::OutOfRange,
                format!("capacity {capacity} is below {} clients", values.len()),
            ));
        }
        if !values.is_empty() {
            if out.is_null() {
                return Err(null("output buffer"));
            }
            std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
        }
        Ok(())
    })
}

/// The complete result as JSON.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_result_to_json(result: *const FcResult, out: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let r = result_ref(result)?;
        let json = serde_json::to_string(r).map_err(|e| Failure(FcStatus::InvalidArgument, e.to_string()))?;
        write_string(out, json)
    })
}

/// Maximum-likelihood LID estimate from ascending positive neighbour
/// distances; `cap` is returned when all distances are equal.
///
/// # Safety
/// `distances` must hold `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_lid_mle(distances: *const f64, k: usize, cap: f64, out: *mut f64) -> FcStatus {
    guard(|| {
        let d = slice(distances, k, "distances")?;
        let nd = NeighborDistances::new(d.to_vec())?;
        put(out, lid_mle(&nd, cap))
    })
}

/// Fits a two-component 1-D Gaussian mixture by EM with the default
/// iteration limit and tolerance. Identical values give
/// `FC_STATUS_INVALID_ARGUMENT`.
///
/// # Safety
/// `values` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_fit_gmm2(values: *const f64, n: usize, out: *mut FcGmmFit) -> FcStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        let fit = fit_gmm2(v, GmmOptions::default())?;
        put(
            out,
            FcGmmFit {
                weights: fit.weights,
                means: fit.means,
                variances: fit.variances,
                log_likelihood: fit.log_likelihood,
                n_iters: fit.n_iters,
            },
        )
    })
}

/// Communication cost of a full FedCorr run from the accounting identity,
/// without training.
#[no_mangle]
pub extern "C" fn fc_planned_comm_cost(
    n_clients: usize,
    fraction: f64,
    t1: usize,
    t2: usize,
    t3: usize,
    n_clean: usize,
) -> usize {
    planned_comm_cost(n_clients, fraction, t1, t2, t3, n_clean)
}
