//! C ABI over the sinomap library.
//!
//! Every fallible function returns a [`SinomapStatus`]. On failure a
//! message is kept per thread and can be read with [`sinomap_last_error`].
//! Arrays are row-major `rows × cols` buffers of `double` (or `uint64_t`
//! for latent counts); sinograms are angle-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use sinomap::map_model::{self, PriorConfig};
use sinomap::metrics;
use sinomap::net::{AdamConfig, AdamState, NetSpec, NetworkParams};
use sinomap::noise::{PhotonData, ScanConfig};
use sinomap::pipeline;
use sinomap::trainer;
use sinomap::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinomapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    BadFormat = 5,
    Panic = 6,
}

/// Opaque network handle.
pub struct SinomapNetwork {
    params: NetworkParams,
    adam: AdamState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> SinomapStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::CacheMismatch(_) => SinomapStatus::ShapeMismatch,
        Error::Io { .. } | Error::MissingInput(_) => SinomapStatus::Io,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::UnknownKind(_)
        | Error::Truncated { .. } => SinomapStatus::BadFormat,
        _ => SinomapStatus::InvalidArgument,
    }
}

struct Fail(SinomapStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SinomapStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SinomapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SinomapStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SinomapStatus::Panic
        }
    }
}

unsafe fn view<'a, T>(data: *const T, rows: usize, cols: usize, what: &str) -> Result<ArrayView2<'a, T>, Fail> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(SinomapStatus::InvalidArgument, "array size overflows".into()))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(ArrayView2::from_shape((rows, cols), slice).expect("length matches shape"))
}

unsafe fn write_out<T: Copy>(dst: *mut T, src: &Array2<T>, what: &str) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null(what));
    }
    let out = std::slice::from_raw_parts_mut(dst, src.len());
    for (o, v) in out.iter_mut().zip(src.iter()) {
        *o = *v;
    }
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail(SinomapStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn net_spec(n_layers: u32, channels: u32, residual: bool) -> NetSpec {
    NetSpec {
        n_layers: n_layers as usize,
        channels: channels as usize,
        residual,
    }
}

unsafe fn emit_handle(out: *mut *mut SinomapNetwork, params: NetworkParams, adam: AdamState) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(SinomapNetwork { params, adam }));
    Ok(())
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sinomap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Network whose parameters are all zero (the identity map when `residual`).
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sinomap_network_zeros(
    n_layers: u32,
    channels: u32,
    residual: bool,
    out: *mut *mut SinomapNetwork,
) -> SinomapStatus {
    guard(|| {
        let params = NetworkParams::zeros(net_spec(n_layers, channels, residual))?;
        let adam = AdamState::new(AdamConfig::default(), params.len());
        emit_handle(out, params, adam)
    })
}

/// Freshly initialized network, deterministic in `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sinomap_network_init(
    n_layers: u32,
    channels: u32,
    residual: bool,
    seed: u64,
    out: *mut *mut SinomapNetwork,
) -> SinomapStatus {
    guard(|| {
        let params = NetworkParams::init(net_spec(n_layers, channels, residual), seed)?;
        let adam = AdamState::new(AdamConfig::default(), params.len());
        emit_handle(out, params, adam)
    })
}

/// Load a checkpoint written by the `sinomap train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sinomap_network_load(
    path: *const c_char,
    out: *mut *mut SinomapNetwork,
) -> SinomapStatus {
    guard(|| {
        let (params, adam) = pipeline::load_checkpoint(&path_arg(path)?)?;
        emit_handle(out, params, adam)
    })
}

/// # Safety
/// `net` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sinomap_network_save(
    net: *const SinomapNetwork,
    path: *const c_char,
) -> SinomapStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        pipeline::save_checkpoint(&path_arg(path)?, &net.params, &net.adam)?;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sinomap_network_free(net: *mut SinomapNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sinomap_network_param_count(net: *const SinomapNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.params.len())
}

/// Enhance one `n_angles × n_detectors` sinogram into `output` (same size).
/// `seconds`, if non-null, receives the inference wall time.
///
/// # Safety
/// Buffers must hold `n_angles * n_detectors` elements.
#[no_mangle]
pub unsafe extern "C" fn sinomap_enhance(
    net: *const SinomapNetwork,
    input: *const f64,
    n_angles: usize,
    n_detectors: usize,
    output: *mut f64,
    seconds: *mut f64,
) -> SinomapStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        let x = view(input, n_angles, n_detectors, "input")?.to_owned();
        let (f, dt) = trainer::enhance(&net.params, &x)?;
        write_out(output, &f, "output")?;
        if !seconds.is_null() {
            *seconds = dt.as_secs_f64();
        }
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must hold `rows * cols` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sinomap_psnr(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    peak: f64,
    out: *mut f64,
) -> SinomapStatus {
    guard(|| {
        let a = view(a, rows, cols, "a")?.to_owned();
        let b = view(b, rows, cols, "b")?.to_owned();
        let v = metrics::psnr(&a, &b, peak)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must hold `rows * cols` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sinomap_ssim(
    a: *const f64,
    b: *const f64,
    rows: usize,
    cols: usize,
    peak: f64,
    out: *mut f64,
) -> SinomapStatus {
    guard(|| {
        let a = view(a, rows, cols, "a")?.to_owned();
        let b = view(b, rows, cols, "b")?.to_owned();
        let v = metrics::ssim(&a, &b, peak)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

unsafe fn photons(
    measured: *const f64,
    latent: *const u64,
    rows: usize,
    cols: usize,
) -> Result<PhotonData, Fail> {
    Ok(PhotonData {
        measured: view(measured, rows, cols, "measured")?.to_owned(),
        latent: view(latent, rows, cols, "latent")?.to_owned(),
    })
}

/// One latent-count sweep at fixed `f`. `latent` holds the starting counts
/// and receives the updated ones.
///
/// # Safety
/// All buffers must hold `rows * cols` elements.
#[no_mangle]
pub unsafe extern "C" fn sinomap_update_latent(
    f: *const f64,
    measured: *const f64,
    latent: *mut u64,
    rows: usize,
    cols: usize,
    i0: f64,
    sigma: f64,
) -> SinomapStatus {
    guard(|| {
        let f = view(f, rows, cols, "f")?.to_owned();
        let pd = photons(measured, latent, rows, cols)?;
        let scan = ScanConfig::uniform(i0, sigma)?;
        let updated = map_model::update_g(&f, &pd, &scan)?;
        write_out(latent, &updated.latent, "latent")
    })
}

/// Unsupervised objective at `f`: the data term plus `k`-weighted prior.
/// `grad`, if non-null, receives the gradient with respect to `f`.
///
/// # Safety
/// All buffers must hold `rows * cols` elements; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sinomap_unsup_loss(
    f: *const f64,
    measured: *const f64,
    latent: *const u64,
    rows: usize,
    cols: usize,
    i0: f64,
    sigma: f64,
    k: f64,
    eps: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> SinomapStatus {
    guard(|| {
        let f = view(f, rows, cols, "f")?.to_owned();
        let pd = photons(measured, latent, rows, cols)?;
        let scan = ScanConfig::uniform(i0, sigma)?;
        let prior = PriorConfig::new(k, eps)?;
        let (b, g) = map_model::unsup_loss_and_grad(&f, &pd, &scan, &prior)?;
        *loss.as_mut().ok_or_else(|| null("loss"))? = b.total;
        if !grad.is_null() {
            write_out(grad, &g, "grad")?;
        }
        Ok(())
    })
}
