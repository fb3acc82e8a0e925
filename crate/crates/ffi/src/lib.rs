//! C interface to `survatt`.
//!
//! Every function returns a [`SurvattStatus`]. On failure a description is
//! kept per thread and can be read with [`survatt_last_error_message`].
//! Handles are opaque, owned by the caller and released with the matching
//! `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use survatt::att::{estimate_att, AttConfig, AttEstimate};
use survatt::counterfactual::TreatmentTiming;
use survatt::panel::{load_panel, locf_expand, read_headers, Panel, Schema};
use survatt::simulate::{generate_cohort, GeneratorParams, Regime, RegimeConfig};
use survatt::Error;

/// Result of every call. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvattStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Data = 5,
    Estimation = 6,
    NoTreatedPersonTime = 7,
    Panic = 9,
}

/// When a treatment start begins to act on the covariates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvattTiming {
    Lagged = 0,
    Concurrent = 1,
}

/// Curves held by an ATT result.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvattCurve {
    /// Plug-in estimate, equal to direct plus indirect.
    Direct = 0,
    /// Treatment coefficient of the fit on the manipulated panel.
    Shortcut = 1,
    MediationDirect = 2,
    MediationIndirect = 3,
}

/// Opaque panel handle.
pub struct SurvattPanel {
    panel: Panel,
}

/// Opaque ATT estimate handle.
pub struct SurvattAtt {
    estimate: AttEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SurvattStatus {
    match e {
        Error::Config(_) | Error::InvalidConfig(_) => SurvattStatus::Config,
        Error::Io(_) => SurvattStatus::Io,
        Error::NoTreatedPersonTime => SurvattStatus::NoTreatedPersonTime,
        Error::NonEstimableGap { .. }
        | Error::InsufficientUntreatedData { .. }
        | Error::NoEvents
        | Error::NonConvergence { .. }
        | Error::PerfectPrediction(_)
        | Error::MonotoneLikelihood { .. }
        | Error::TimeVaryingInMsm(_)
        | Error::TooManyFailures { .. } => SurvattStatus::Estimation,
        _ => SurvattStatus::Data,
    }
}

struct Failure(SurvattStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), format!("{}: {e}", e.kind()))
    }
}

fn null(what: &str) -> Failure {
    Failure(SurvattStatus::NullArgument, format!("`{what}` is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(SurvattStatus::InvalidArgument, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SurvattStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SurvattStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            SurvattStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid nul-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{path}: {e}"))).into())
}

/// # Safety
/// `out` is null or valid for writes.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn survatt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn survatt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a long-format CSV panel.
///
/// `schema_toml` maps column roles to headers; when null the roles are
/// inferred from the header line. Sparse panels are expanded by carrying the
/// last measurement forward.
///
/// # Safety
/// String arguments are null or nul-terminated; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn survatt_panel_read_csv(
    path: *const c_char,
    schema_toml: *const c_char,
    out: *mut *mut SurvattPanel,
) -> SurvattStatus {
    guard(|| {
        let path = text(path, "path")?;
        let schema = if schema_toml.is_null() {
            Schema::infer(&read_headers(open(path)?)?)
        } else {
            Schema::from_toml(text(schema_toml, "schema_toml")?)?
        };
        let panel = load_panel(open(path)?, &schema)?;
        let complete =
            panel.is_contiguous() && panel.subjects().iter().all(|s| s.rows.iter().all(|r| r.all_observed()));
        let panel = if complete { panel } else { locf_expand(&panel)? };
        emit(out, SurvattPanel { panel })
    })
}

/// Simulates the observed arm of one regime with the default generator.
///
/// `regime` is 1, 2 or 3 for the confounded regimes and 0 for randomized
/// treatment.
///
/// # Safety
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn survatt_panel_simulate(
    regime: u32,
    n: usize,
    seed: u64,
    out: *mut *mut SurvattPanel,
) -> SurvattStatus {
    guard(|| {
        let regime = match regime {
            0 => Regime::Randomized,
            1 => Regime::One,
            2 => Regime::Two,
            3 => Regime::Three,
            r => return Err(invalid(format!("unknown regime {r}"))),
        };
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let cohort = generate_cohort(&RegimeConfig {
            regime,
            n,
            seed,
            params: GeneratorParams::default(),
        })?;
        emit(out, SurvattPanel { panel: cohort.observed })
    })
}

/// # Safety
/// `panel` is null or a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn survatt_panel_subject_count(panel: *const SurvattPanel, out: *mut usize) -> SurvattStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| null("panel"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.panel.len();
        Ok(())
    })
}

/// Last interval index of the grid.
///
/// # Safety
/// `panel` is null or a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn survatt_panel_t_max(panel: *const SurvattPanel, out: *mut u32) -> SurvattStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| null("panel"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.panel.t_max();
        Ok(())
    })
}

/// # Safety
/// `panel` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn survatt_panel_free(panel: *mut SurvattPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Counterfactual imputation, outcome fits and mediation decomposition with
/// the default model: every covariate in the outcome and increment models.
///
/// # Safety
/// `panel` is null or a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn survatt_att_estimate(
    panel: *const SurvattPanel,
    timing: SurvattTiming,
    ipcw: bool,
    out: *mut *mut SurvattAtt,
) -> SurvattStatus {
    guard(|| {
        let p = &panel.as_ref().ok_or_else(|| null("panel"))?.panel;
        let mut config = AttConfig::for_panel(p);
        config.counterfactual.timing = match timing {
            SurvattTiming::Lagged => TreatmentTiming::Lagged,
            SurvattTiming::Concurrent => TreatmentTiming::Concurrent,
        };
        config.ipcw = ipcw;
        let estimate = estimate_att(p, &config)?;
        emit(out, SurvattAtt { estimate })
    })
}

/// Number of grid points in every curve of the result (`t_max + 1`).
///
/// # Safety
/// `att` is null or a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn survatt_att_len(att: *const SurvattAtt, out: *mut usize) -> SurvattStatus {
    guard(|| {
        let a = att.as_ref().ok_or_else(|| null("att"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = a.estimate.direct.values.len();
        Ok(())
    })
}

/// Copies one curve into `values` and, when `se` is not null, its robust
/// standard errors (NaN where none is defined). Both buffers hold `len`
/// doubles; `len` must be at least [`survatt_att_len`].
///
/// # Safety
/// `att` is null or a live handle; non-null buffers hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn survatt_att_curve(
    att: *const SurvattAtt,
    curve: SurvattCurve,
    values: *mut f64,
    se: *mut f64,
    len: usize,
) -> SurvattStatus {
    guard(|| {
        let e = &att.as_ref().ok_or_else(|| null("att"))?.estimate;
        if values.is_null() {
            return Err(null("values"));
        }
        let c = match curve {
            SurvattCurve::Direct => &e.direct,
            SurvattCurve::Shortcut => &e.shortcut,
            SurvattCurve::MediationDirect => &e.mediation_direct,
            SurvattCurve::MediationIndirect => &e.mediation_indirect,
        };
        let n = c.values.len();
        if len < n {
            return Err(invalid(format!("buffer holds {len} values, curve has {n}")));
        }
        std::slice::from_raw_parts_mut(values, n).copy_from_slice(&c.values);
        if !se.is_null() {
            let out = std::slice::from_raw_parts_mut(se, n);
            for (t, s) in out.iter_mut().enumerate() {
                *s = c.se(t as u32).unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `att` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn survatt_att_free(att: *mut SurvattAtt) {
    if !att.is_null() {
        drop(Box::from_raw(att));
    }
}
