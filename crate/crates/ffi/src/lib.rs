//! C ABI over the aecbse estimator.
//!
//! Spectra cross the boundary as interleaved `double` pairs `(re, im)`.
//! Microphone spectra are laid out bin-major: `x[((f * frames + t) * mics + m) * 2]`.
//! The loudspeaker and the output use the same layout with one channel.
//!
//! Every call returns an [`AecbseStatus`]. On failure the message is available
//! from [`aecbse_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use aecbse::linalg::CMat;
use aecbse::{optimizer, Algorithm, Error, RunConfig, RunOutput, Spectrogram};
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AecbseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Numerical = 4,
    NoExcitation = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AecbseAlgorithm {
    Joint = 0,
    BnlmsIve = 1,
    LsAec = 2,
    IveOnly = 3,
    Unprocessed = 4,
}

impl From<AecbseAlgorithm> for Algorithm {
    fn from(a: AecbseAlgorithm) -> Self {
        match a {
            AecbseAlgorithm::Joint => Algorithm::Joint,
            AecbseAlgorithm::BnlmsIve => Algorithm::BnlmsIve,
            AecbseAlgorithm::LsAec => Algorithm::LsAec,
            AecbseAlgorithm::IveOnly => Algorithm::IveOnly,
            AecbseAlgorithm::Unprocessed => Algorithm::Unprocessed,
        }
    }
}

/// Problem size and estimator settings.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AecbseConfig {
    pub mics: usize,
    pub bins: usize,
    pub frames: usize,
    pub iterations: usize,
    pub algorithm: AecbseAlgorithm,
    /// Relative diagonal loading; 0 selects the library default.
    pub loading: f64,
    /// One-based backprojection channel.
    pub reference_channel: usize,
}

/// Configured estimator.
pub struct AecbseProcessor {
    config: AecbseConfig,
    run: RunConfig,
}

/// Output of one [`aecbse_process`] call.
pub struct AecbseResult {
    out: RunOutput,
    mics: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: AecbseStatus, msg: impl Into<String>) -> AecbseStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> AecbseStatus {
    match e {
        Error::Shape(_) | Error::SignalTooShort { .. } => AecbseStatus::ShapeMismatch,
        Error::NoExcitation => AecbseStatus::NoExcitation,
        Error::Numerical(_) => AecbseStatus::Numerical,
        _ => AecbseStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> AecbseStatus) -> AecbseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == AecbseStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(AecbseStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn aecbse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Defaults: 4 microphones, 1025 bins, 50 iterations, joint algorithm. `frames` must be set.
#[no_mangle]
pub extern "C" fn aecbse_default_config() -> AecbseConfig {
    let run = RunConfig::default();
    AecbseConfig {
        mics: 4,
        bins: 1025,
        frames: 0,
        iterations: run.iterations,
        algorithm: AecbseAlgorithm::Joint,
        loading: 0.0,
        reference_channel: run.reference_channel,
    }
}

/// Creates a processor. `out` receives a handle to free with [`aecbse_processor_free`].
///
/// # Safety
/// `config` must point to a valid config and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn aecbse_processor_new(config: *const AecbseConfig, out: *mut *mut AecbseProcessor) -> AecbseStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail(AecbseStatus::NullPointer, "null config or output pointer");
        }
        // SAFETY: checked non-null; caller guarantees validity.
        let config = unsafe { *config };
        if config.mics == 0 || config.bins == 0 || config.frames == 0 {
            return fail(AecbseStatus::InvalidArgument, "mics, bins and frames must be positive");
        }
        let defaults = RunConfig::default();
        let run = RunConfig {
            iterations: config.iterations,
            loading: if config.loading == 0.0 { defaults.loading } else { config.loading },
            reference_channel: config.reference_channel,
            algorithm: config.algorithm.into(),
            ..defaults
        };
        if let Err(e) = run.validate(config.mics) {
            return fail(AecbseStatus::InvalidArgument, e.to_string());
        }
        let p = Box::new(AecbseProcessor { config, run });
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(p) };
        AecbseStatus::Ok
    })
}

/// Frees a processor. Null is ignored.
///
/// # Safety
/// `p` must come from [`aecbse_processor_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn aecbse_processor_free(p: *mut AecbseProcessor) {
    if !p.is_null() {
        // SAFETY: caller guarantees ownership.
        drop(unsafe { Box::from_raw(p) });
    }
}

fn read_spectrogram(data: &[f64], bins: usize, frames: usize, channels: usize) -> Result<Spectrogram, Error> {
    let mats = (0..bins)
        .map(|f| {
            CMat::from_fn(channels, frames, |m, t| {
                let i = ((f * frames + t) * channels + m) * 2;
                Complex64::new(data[i], data[i + 1])
            })
        })
        .collect();
    Spectrogram::from_bins(mats)
}

/// Runs the configured algorithm.
///
/// `x` holds `2 * bins * frames * mics` doubles, `u` holds `2 * bins * frames`.
/// On success `out` receives a result handle to free with [`aecbse_result_free`].
///
/// # Safety
/// `p` must be a live processor; `x` and `u` must point to at least `x_len` and `u_len`
/// readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aecbse_process(
    p: *const AecbseProcessor,
    x: *const f64,
    x_len: usize,
    u: *const f64,
    u_len: usize,
    out: *mut *mut AecbseResult,
) -> AecbseStatus {
    guard(|| {
        if p.is_null() || x.is_null() || u.is_null() || out.is_null() {
            return fail(AecbseStatus::NullPointer, "null argument");
        }
        // SAFETY: checked non-null; caller guarantees validity.
        let p = unsafe { &*p };
        let c = &p.config;
        let cells = c.bins * c.frames * 2;
        if x_len != cells * c.mics || u_len != cells {
            return fail(
                AecbseStatus::ShapeMismatch,
                format!(
                    "expected {} microphone and {} loudspeaker doubles, got {x_len} and {u_len}",
                    cells * c.mics,
                    cells
                ),
            );
        }
        // SAFETY: lengths checked against the caller-declared buffer sizes.
        let (xs, us) = unsafe { (std::slice::from_raw_parts(x, x_len), std::slice::from_raw_parts(u, u_len)) };
        let result = read_spectrogram(xs, c.bins, c.frames, c.mics)
            .and_then(|xs| Ok((xs, read_spectrogram(us, c.bins, c.frames, 1)?)))
            .and_then(|(xs, us)| optimizer::run(&xs, &us, &p.run, None));
        match result {
            Ok(run) => {
                let r = Box::new(AecbseResult { out: run, mics: c.mics });
                // SAFETY: checked non-null.
                unsafe { *out = Box::into_raw(r) };
                AecbseStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Number of doubles in the output spectrum, `2 * bins * frames`.
///
/// # Safety
/// `r` must be a live result or null.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_output_len(r: *const AecbseResult) -> usize {
    // SAFETY: caller guarantees validity when non-null.
    unsafe { r.as_ref() }.map_or(0, |r| 2 * r.out.s_hat.num_bins() * r.out.s_hat.frames())
}

/// Number of doubles in each filter dump, `2 * bins * mics`.
///
/// # Safety
/// `r` must be a live result or null.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_filter_len(r: *const AecbseResult) -> usize {
    // SAFETY: caller guarantees validity when non-null.
    unsafe { r.as_ref() }.map_or(0, |r| 2 * r.out.state.num_bins() * r.mics)
}

/// Iterations actually run.
///
/// # Safety
/// `r` must be a live result or null.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_iterations(r: *const AecbseResult) -> usize {
    // SAFETY: caller guarantees validity when non-null.
    unsafe { r.as_ref() }.map_or(0, |r| r.out.diagnostics.iterations.len())
}

unsafe fn copy_out(
    r: *const AecbseResult,
    dst: *mut f64,
    len: usize,
    expected: impl Fn(&AecbseResult) -> usize,
    fill: impl Fn(&AecbseResult, &mut [f64]),
) -> AecbseStatus {
    guard(|| {
        if r.is_null() || dst.is_null() {
            return fail(AecbseStatus::NullPointer, "null argument");
        }
        // SAFETY: checked non-null; caller guarantees validity.
        let r = unsafe { &*r };
        let n = expected(r);
        if len != n {
            return fail(AecbseStatus::ShapeMismatch, format!("buffer holds {len} doubles, need {n}"));
        }
        // SAFETY: caller guarantees `len` writable doubles.
        fill(r, unsafe { std::slice::from_raw_parts_mut(dst, len) });
        AecbseStatus::Ok
    })
}

/// Copies the backprojected output spectrum.
///
/// # Safety
/// `r` must be a live result; `dst` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_copy_output(r: *const AecbseResult, dst: *mut f64, len: usize) -> AecbseStatus {
    // SAFETY: forwarded caller contract.
    unsafe {
        copy_out(
            r,
            dst,
            len,
            |r| aecbse_result_output_len(r),
            |r, d| {
                let s = &r.out.s_hat;
                let frames = s.frames();
                for f in 0..s.num_bins() {
                    for t in 0..frames {
                        let v = s.get(f, t, 0);
                        let i = (f * frames + t) * 2;
                        d[i] = v.re;
                        d[i + 1] = v.im;
                    }
                }
            },
        )
    }
}

fn dump_filters(r: &AecbseResult, d: &mut [f64], echo: bool) {
    for (f, bin) in r.out.state.bins.iter().enumerate() {
        let v = if echo { &bin.h } else { &bin.w };
        for (m, c) in v.iter().enumerate() {
            let i = (f * r.mics + m) * 2;
            d[i] = c.re;
            d[i + 1] = c.im;
        }
    }
}

/// Copies the echo path estimates, bin-major.
///
/// # Safety
/// `r` must be a live result; `dst` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_copy_echo_path(r: *const AecbseResult, dst: *mut f64, len: usize) -> AecbseStatus {
    // SAFETY: forwarded caller contract.
    unsafe { copy_out(r, dst, len, |r| aecbse_result_filter_len(r), |r, d| dump_filters(r, d, true)) }
}

/// Copies the extraction beamformers, bin-major.
///
/// # Safety
/// `r` must be a live result; `dst` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_copy_beamformer(r: *const AecbseResult, dst: *mut f64, len: usize) -> AecbseStatus {
    // SAFETY: forwarded caller contract.
    unsafe { copy_out(r, dst, len, |r| aecbse_result_filter_len(r), |r, d| dump_filters(r, d, false)) }
}

/// Frees a result. Null is ignored.
///
/// # Safety
/// `r` must come from [`aecbse_process`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn aecbse_result_free(r: *mut AecbseResult) {
    if !r.is_null() {
        // SAFETY: caller guarantees ownership.
        drop(unsafe { Box::from_raw(r) });
    }
}
