//! C ABI over `psep-core`.
//!
//! Every fallible function returns a [`PsepStatus`]; on failure the message
//! is kept per thread and can be copied out with
//! [`psep_last_error_message`]. Priors are opaque handles owned by the
//! caller and released with [`psep_prior_free`]. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use psep::checkpoint::Checkpoint;
use psep::density::{DensityModel, ModelFamily};
use psep::separation::{sgld_separate, InitPolicy, SgldConfig};
use psep::signal::{mu_law_decode, mu_law_encode, synth_waveform, SourceKind, SourceParams};
use psep::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NotDifferentiable = 5,
    Numerical = 6,
    Missing = 7,
    Panic = 8,
    Other = 9,
}

/// A loaded prior checkpoint.
pub struct PsepPrior {
    checkpoint: Checkpoint,
}

/// Sampler settings for [`psep_sgld_separate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsepSgldParams {
    pub step_size: f64,
    pub steps: usize,
    /// mixture noise std
    pub gamma: f64,
    pub seed: u64,
    /// std of the noise added to the mix to initialize every source
    pub init_std: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PsepStatus {
    match e {
        Error::InvalidArgument(_) | Error::Shape(_) | Error::Config(_) | Error::Unsupported(_) => {
            PsepStatus::InvalidArgument
        }
        Error::Io { .. } => PsepStatus::Io,
        Error::Format { .. } => PsepStatus::Format,
        Error::NotDifferentiable(_) => PsepStatus::NotDifferentiable,
        Error::NonFinite { .. } | Error::Numerical(_) | Error::Divergence { .. } | Error::Diff(_) => {
            PsepStatus::Numerical
        }
        Error::Missing(_) => PsepStatus::Missing,
        #[allow(unreachable_patterns)]
        _ => PsepStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PsepStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PsepStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PsepStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn prior<'a>(p: *const PsepPrior) -> Result<&'a PsepPrior, Fail> {
    p.as_ref().ok_or(Fail::Null("prior"))
}

/// Copy the calling thread's last error message, NUL terminated and
/// truncated to `len` bytes. Returns the full message length without the
/// terminator; pass a null buffer to query it.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn psep_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn psep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a checkpoint file into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn psep_prior_load(path: *const c_char, out: *mut *mut PsepPrior) -> PsepStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
        let checkpoint = Checkpoint::read(Path::new(path))?;
        *out = Box::into_raw(Box::new(PsepPrior { checkpoint }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `prior` must be null or a handle from [`psep_prior_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psep_prior_free(prior: *mut PsepPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Tags of a prior: family (0 flow, 1 autoregressive), source code
/// (0 sine, 1 sawtooth, 2 square, 3 triangle) and conditioning σ.
///
/// # Safety
/// `prior` must be a live handle; the outputs valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn psep_prior_info(
    prior: *const PsepPrior,
    family: *mut u32,
    source: *mut u32,
    sigma: *mut f64,
) -> PsepStatus {
    guard(|| {
        let p = self::prior(prior)?;
        let ck = &p.checkpoint;
        if !family.is_null() {
            *family = match ck.family() {
                ModelFamily::Flow => 0,
                _ => 1,
            };
        }
        if !source.is_null() {
            *source = ck.source.code();
        }
        if !sigma.is_null() {
            *sigma = ck.sigma;
        }
        Ok(())
    })
}

/// Mean log-density per sample of one frame.
///
/// # Safety
/// `samples` must hold `len` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn psep_prior_log_density(
    prior: *const PsepPrior,
    samples: *const f64,
    len: usize,
    out: *mut f64,
) -> PsepStatus {
    guard(|| {
        let p = self::prior(prior)?;
        let x = slice(samples, len, "samples")?;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = p.checkpoint.model.log_density(x)?;
        Ok(())
    })
}

/// Total log-density of a frame and its gradient with respect to every
/// sample. Autoregressive priors return `NotDifferentiable`.
///
/// # Safety
/// `samples` and `grad` must hold `len` values; `total` must be valid.
#[no_mangle]
pub unsafe extern "C" fn psep_prior_grad_log_density(
    prior: *const PsepPrior,
    samples: *const f64,
    len: usize,
    total: *mut f64,
    grad: *mut f64,
) -> PsepStatus {
    guard(|| {
        let p = self::prior(prior)?;
        let x = slice(samples, len, "samples")?;
        let total = total.as_mut().ok_or(Fail::Null("total"))?;
        let g_out = slice_mut(grad, len, "grad")?;
        let (t, g) = p.checkpoint.model.grad_log_density(x)?;
        *total = t;
        g_out.copy_from_slice(&g);
        Ok(())
    })
}

/// µ-law encode `len` samples into classes `0..=255`; values outside
/// `[-1, 1]` are clamped.
///
/// # Safety
/// `samples` and `classes` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn psep_mulaw_encode(samples: *const f64, len: usize, classes: *mut u16) -> PsepStatus {
    guard(|| {
        let x = slice(samples, len, "samples")?;
        let out = slice_mut(classes, len, "classes")?;
        out.copy_from_slice(&mu_law_encode(x).classes);
        Ok(())
    })
}

/// Decode µ-law classes back to amplitudes.
///
/// # Safety
/// `classes` and `samples` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn psep_mulaw_decode(classes: *const u16, len: usize, samples: *mut f64) -> PsepStatus {
    guard(|| {
        let c = slice(classes, len, "classes")?;
        let out = slice_mut(samples, len, "samples")?;
        out.copy_from_slice(&mu_law_decode(c)?);
        Ok(())
    })
}

/// Synthesize `len` samples of a toy waveform; `kind` is a source code as
/// in [`psep_prior_info`].
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn psep_synth_waveform(
    kind: u32,
    frequency: f64,
    amplitude: f64,
    phase: f64,
    sample_rate: u32,
    len: usize,
    out: *mut f64,
) -> PsepStatus {
    guard(|| {
        let kind =
            SourceKind::from_code(kind).ok_or_else(|| Error::InvalidArgument(format!("unknown source code {kind}")))?;
        let out = slice_mut(out, len, "out")?;
        let frame = synth_waveform(kind, SourceParams { frequency, amplitude, phase }, sample_rate, len)?;
        out.copy_from_slice(frame.samples());
        Ok(())
    })
}

/// Separate a mean mix of `n_priors` sources with SGLD. `sources` and
/// `posterior_mean` receive `n_priors * len` values, source-major.
///
/// # Safety
/// `mix` must hold `len` values, `priors` `n_priors` live handles, and each
/// output `n_priors * len` values.
#[no_mangle]
pub unsafe extern "C" fn psep_sgld_separate(
    mix: *const f64,
    len: usize,
    priors: *const *const PsepPrior,
    n_priors: usize,
    params: *const PsepSgldParams,
    sources: *mut f64,
    posterior_mean: *mut f64,
) -> PsepStatus {
    guard(|| {
        let m = slice(mix, len, "mix")?;
        let handles = slice(priors, n_priors, "priors")?;
        let params = params.as_ref().ok_or(Fail::Null("params"))?;
        let models: Vec<&dyn DensityModel> = handles
            .iter()
            .map(|&h| self::prior(h).map(|p| &p.checkpoint.model as &dyn DensityModel))
            .collect::<Result<_, _>>()?;
        let total = n_priors.checked_mul(len).ok_or(Error::InvalidArgument("output size overflows".into()))?;
        let s_out = slice_mut(sources, total, "sources")?;
        let m_out = slice_mut(posterior_mean, total, "posterior_mean")?;
        let cfg = SgldConfig {
            step_size: params.step_size,
            steps: params.steps,
            gamma: params.gamma,
            seed: params.seed,
            init: InitPolicy::FromMix,
            init_std: params.init_std,
            diag_stride: params.steps.max(1),
            ..SgldConfig::default()
        };
        let result = sgld_separate(m, &models, &cfg)?;
        for k in 0..n_priors {
            s_out[k * len..(k + 1) * len].copy_from_slice(&result.sources[k]);
            m_out[k * len..(k + 1) * len].copy_from_slice(&result.posterior_mean[k]);
        }
        Ok(())
    })
}
