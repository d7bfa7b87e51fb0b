//! C ABI over `qmag`.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`/`*_load`
//! call and released with the matching `*_free`. Every fallible call returns a
//! `QmagStatus`; on failure `qmag_last_error` describes the cause on the
//! calling thread. Frequencies are in Hz (cycles), times in seconds.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qmag::baselines::{fft_estimate, lsq_fit_cos2, LsqOptions};
use qmag::fixtures::Reference;
use qmag::inference::{grid_posterior, metropolis_run, uniform_grid};
use qmag::measurement::{generate_dataset, Dataset};
use qmag::run::{execute, Preset, RunConfig, BUILD};
use qmag::units::{hz, to_hz};
use qmag::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmagStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    InvalidData = 4,
    Propagation = 5,
    ZeroPosterior = 6,
    LowAcceptance = 7,
    Spectrum = 8,
    Io = 9,
    Json = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmagPreset {
    CaseI = 0,
    CaseIi = 1,
}

/// A measurement record.
pub struct QmagDataset(Dataset);

/// A run configuration.
pub struct QmagConfig(RunConfig);

/// Posterior moments from the sampler. `xi_*` are NaN when ξ is fixed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmagEstimate {
    pub omega_tg_hz: f64,
    pub omega_tg_sd_hz: f64,
    pub xi_hz: f64,
    pub xi_sd_hz: f64,
    pub acceptance: f64,
    pub max_split_r_hat: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QmagStatus {
    match e {
        Error::InvalidConfig(_) => QmagStatus::InvalidConfig,
        Error::InvalidArgument(_) => QmagStatus::InvalidArgument,
        Error::InvalidDataset(_) => QmagStatus::InvalidData,
        Error::Propagation(_) => QmagStatus::Propagation,
        Error::ZeroPosterior => QmagStatus::ZeroPosterior,
        Error::LowAcceptance { .. } => QmagStatus::LowAcceptance,
        Error::Spectrum(_) => QmagStatus::Spectrum,
        Error::Io(_) => QmagStatus::Io,
        Error::Json(_) => QmagStatus::Json,
    }
}

struct Fail(QmagStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QmagStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QmagStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QmagStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(QmagStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(QmagStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next `qmag_*` call on the same thread.
#[no_mangle]
pub extern "C" fn qmag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version and build identity. Static storage.
#[no_mangle]
pub extern "C" fn qmag_version() -> *const c_char {
    static V: std::sync::OnceLock<CString> = std::sync::OnceLock::new();
    V.get_or_init(|| CString::new(BUILD).expect("no nul")).as_ptr()
}

/// Parses a dataset from JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_from_json(json: *const c_char, out: *mut *mut QmagDataset) -> QmagStatus {
    guard(|| {
        let d = Dataset::from_json(str_arg(json, "json")?)?;
        put(out, Box::into_raw(Box::new(QmagDataset(d))), "out")
    })
}

/// Loads a dataset JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_load(path: *const c_char, out: *mut *mut QmagDataset) -> QmagStatus {
    guard(|| {
        let d = Dataset::load(Path::new(str_arg(path, "path")?))?;
        put(out, Box::into_raw(Box::new(QmagDataset(d))), "out")
    })
}

/// One of the bundled reference records, e.g. `"case-i-nm4"`.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_reference(name: *const c_char, out: *mut *mut QmagDataset) -> QmagStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let r = Reference::from_name(name)
            .ok_or_else(|| Fail(QmagStatus::InvalidArgument, format!("unknown reference record `{name}`")))?;
        put(out, Box::into_raw(Box::new(QmagDataset(r.load()?))), "out")
    })
}

/// # Safety
/// `d` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_free(d: *mut QmagDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Number of time points and shots per point.
///
/// # Safety
/// `d` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_shape(d: *const QmagDataset, n_points: *mut usize, n_m: *mut u32) -> QmagStatus {
    guard(|| {
        let d = &obj(d, "dataset")?.0;
        put(n_points, d.len(), "n_points")?;
        put(n_m, d.n_m, "n_m")
    })
}

/// Copies times and dark counts into caller buffers of length `len`, which
/// must be at least the number of points.
///
/// # Safety
/// `times_s` and `counts` must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_copy(
    d: *const QmagDataset,
    times_s: *mut f64,
    counts: *mut u32,
    len: usize,
) -> QmagStatus {
    guard(|| {
        let d = &obj(d, "dataset")?.0;
        if times_s.is_null() || counts.is_null() {
            return Err(null("output buffer"));
        }
        if len < d.len() {
            return Err(Fail(QmagStatus::BufferTooSmall, format!("need {} elements, got {len}", d.len())));
        }
        ptr::copy_nonoverlapping(d.times_s.as_ptr(), times_s, d.len());
        ptr::copy_nonoverlapping(d.x.as_ptr(), counts, d.len());
        Ok(())
    })
}

/// Writes the dataset as JSON.
///
/// # Safety
/// `d` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qmag_dataset_save(d: *const QmagDataset, path: *const c_char) -> QmagStatus {
    guard(|| {
        obj(d, "dataset")?.0.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// A preset configuration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_config_preset(preset: QmagPreset, out: *mut *mut QmagConfig) -> QmagStatus {
    guard(|| {
        let p = match preset {
            QmagPreset::CaseI => Preset::CaseI,
            QmagPreset::CaseIi => Preset::CaseIi,
        };
        put(out, Box::into_raw(Box::new(QmagConfig(RunConfig::preset(p)))), "out")
    })
}

/// Parses and validates a configuration. Unknown keys are rejected.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_config_from_json(json: *const c_char, out: *mut *mut QmagConfig) -> QmagStatus {
    guard(|| {
        let c = RunConfig::from_json(str_arg(json, "json")?)?;
        c.validate()?;
        put(out, Box::into_raw(Box::new(QmagConfig(c))), "out")
    })
}

/// # Safety
/// `c` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmag_config_free(c: *mut QmagConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Overrides the seed.
///
/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmag_config_set_seed(c: *mut QmagConfig, seed: u64) -> QmagStatus {
    guard(|| {
        c.as_mut().ok_or_else(|| null("config"))?.0.seed = seed;
        Ok(())
    })
}

/// Simulates a dataset from the configured sensor, signal, plan and noise.
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_simulate(c: *const QmagConfig, out: *mut *mut QmagDataset) -> QmagStatus {
    guard(|| {
        let c = &obj(c, "config")?.0;
        let d = generate_dataset(
            &c.plan.to_domain(c.seed)?,
            &c.sensor.to_domain()?,
            &c.signal.to_domain()?,
            &c.acquisition()?,
            c.seed,
        )?;
        put(out, Box::into_raw(Box::new(QmagDataset(d))), "out")
    })
}

/// Posterior mean and standard deviation of Ω_tg on the configured
/// one-dimensional grid at ξ = 0.
///
/// # Safety
/// Handles must be live; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_infer_grid(
    c: *const QmagConfig,
    d: *const QmagDataset,
    mean_hz: *mut f64,
    sd_hz: *mut f64,
) -> QmagStatus {
    guard(|| {
        let c = &obj(c, "config")?.0;
        let d = &obj(d, "dataset")?.0;
        let grid = uniform_grid(hz(c.grid.omega_lo_hz), hz(c.grid.omega_hi_hz), c.grid.omega_points);
        let post = grid_posterior(d, &c.prior.to_domain()?, &grid, &c.forward_model()?)?;
        let (m, s) = post.moments();
        put(mean_hz, to_hz(m), "mean_hz")?;
        put(sd_hz, to_hz(s), "sd_hz")
    })
}

/// Runs the configured Metropolis sampler.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_infer_mcmc(
    c: *const QmagConfig,
    d: *const QmagDataset,
    out: *mut QmagEstimate,
) -> QmagStatus {
    guard(|| {
        let c = &obj(c, "config")?.0;
        let d = &obj(d, "dataset")?.0;
        let s = metropolis_run(d, &c.prior.to_domain()?, &c.mcmc.to_domain(c.seed)?, &c.forward_model()?)?;
        let summary = s.summary(40)?;
        let (xi, xi_sd) = summary.xi.unwrap_or((f64::NAN, f64::NAN));
        put(
            out,
            QmagEstimate {
                omega_tg_hz: to_hz(summary.omega.0),
                omega_tg_sd_hz: to_hz(summary.omega.1),
                xi_hz: to_hz(xi),
                xi_sd_hz: to_hz(xi_sd),
                acceptance: s.acceptance(),
                max_split_r_hat: s.max_r_hat()?,
            },
            "out",
        )
    })
}

/// FFT estimate of Ω_tg and its resolution-limited uncertainty.
///
/// # Safety
/// `d` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_fft_estimate(d: *const QmagDataset, omega_hz: *mut f64, uncertainty_hz: *mut f64) -> QmagStatus {
    guard(|| {
        let f = fft_estimate(&obj(d, "dataset")?.0)?;
        put(omega_hz, to_hz(f.omega_tg_rabi), "omega_hz")?;
        put(uncertainty_hz, to_hz(f.uncertainty), "uncertainty_hz")
    })
}

/// Weighted least-squares fit of the ideal cos² response.
///
/// # Safety
/// `d` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmag_lsq_cos2(
    d: *const QmagDataset,
    init_hz: f64,
    omega_hz: *mut f64,
    ci_hz: *mut f64,
) -> QmagStatus {
    guard(|| {
        let fit = lsq_fit_cos2(&obj(d, "dataset")?.0, hz(init_hz), &LsqOptions::default())?;
        put(omega_hz, to_hz(fit.params[0]), "omega_hz")?;
        put(ci_hz, to_hz(fit.ci[0]), "ci_hz")
    })
}

/// Runs the configured mode as the command-line tool would, writing its
/// files into `out_dir`.
///
/// # Safety
/// `c` must be a live handle and `out_dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qmag_run(c: *const QmagConfig, out_dir: *const c_char) -> QmagStatus {
    guard(|| {
        execute(&obj(c, "config")?.0, Path::new(str_arg(out_dir, "out_dir")?))?;
        Ok(())
    })
}
