//! C ABI over the `pflash` pipeline.
//!
//! Objects cross the boundary as opaque handles (`PflashImage`,
//! `PflashPattern`) created by `pflash_*_new`-style calls and released
//! with the matching `*_free`. Every fallible call returns a
//! [`PflashStatus`]; on failure the message is available from
//! [`pflash_last_error`] until the next failing call on the same thread.
//! Panics never unwind into C; they surface as `PFLASH_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pflash::forward::{render_pf, render_uf};
use pflash::metrics;
use pflash::recon::{joint_reconstruct, reconstruct_uf, RigPrior};
use pflash::snr;
use pflash::{Attenuation, CameraRig, Error, Image, MapKind, NoiseParams, Pattern, PlanarMap, ReconConfig, Seed};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PflashStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Degenerate = 5,
    Diverged = 6,
    Io = 7,
    Format = 8,
    Panic = 9,
}

/// Which flash a capture is rendered or reconstructed for.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PflashFlash {
    Patterned = 0,
    Uniform = 1,
}

/// Opaque H x W x C image of doubles.
pub struct PflashImage(Image);

/// Opaque dot pattern.
pub struct PflashPattern(Pattern);

/// Camera/projector geometry.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PflashRig {
    pub baseline: f64,
    pub focal_px: f64,
    pub ref_distance: f64,
    /// +1 or -1.
    pub disparity_sign: f64,
}

/// Sensor noise; all zero gives a clean render.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PflashNoise {
    pub sigma_r: f64,
    pub sigma_s: f64,
    pub sigma_row: f64,
}

/// The commonly tuned reconstruction settings. Start from
/// `pflash_recon_options_default` and change what you need.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PflashReconOptions {
    pub block_size: usize,
    pub search_range: f64,
    pub search_center: f64,
    pub tv_weight: f64,
    pub max_iters: usize,
    pub outer_rounds: usize,
    /// Non-zero: fit the expected clamped response under `noise`.
    pub clamp_aware: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PflashStatus {
    match e {
        Error::Shape(_) => PflashStatus::Shape,
        Error::NonFinite(_) => PflashStatus::NonFinite,
        Error::InvalidArgument(_) => PflashStatus::InvalidArgument,
        Error::Degenerate(_) => PflashStatus::Degenerate,
        Error::Diverged(_) => PflashStatus::Diverged,
        Error::Io { .. } => PflashStatus::Io,
        Error::Format(_) => PflashStatus::Format,
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

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PflashStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PflashStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PflashStatus::NullPointer
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
            PflashStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn rig_of(r: &PflashRig) -> pflash::Result<CameraRig> {
    CameraRig::new(r.baseline, r.focal_px, r.ref_distance, r.disparity_sign)
}

fn noise_of(n: &PflashNoise) -> NoiseParams {
    NoiseParams::new(n.sigma_r, n.sigma_s, n.sigma_row)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

// ---------------------------------------------------------------- errors

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pflash_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pflash_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(c) => c,
        Err(_) => c"",
    };
    V.as_ptr()
}

// ---------------------------------------------------------------- images

/// Copies `height*width*channels` row-major, channel-interleaved doubles
/// from `data` into a new image.
///
/// # Safety
/// `data` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out_image: *mut *mut PflashImage,
) -> PflashStatus {
    guard(|| {
        let slot = out(out_image, "out_image")?;
        deref(data, "data")?;
        let n = height
            .checked_mul(width)
            .and_then(|x| x.checked_mul(channels))
            .ok_or(Error::InvalidArgument("image size overflows".into()))?;
        let v = std::slice::from_raw_parts(data, n).to_vec();
        *slot = boxed(PflashImage(Image::new(height, width, channels, v)?));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pflash_image_free(image: *mut PflashImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// # Safety
/// `image` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_image_shape(
    image: *const PflashImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> PflashStatus {
    guard(|| {
        let (h, w, c) = deref(image, "image")?.0.shape();
        *out(height, "height")? = h;
        *out(width, "width")? = w;
        *out(channels, "channels")? = c;
        Ok(())
    })
}

/// Copies the pixels into `buf`, which must hold `len` doubles; `len`
/// must equal height*width*channels.
///
/// # Safety
/// `image` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pflash_image_read(image: *const PflashImage, buf: *mut f64, len: usize) -> PflashStatus {
    guard(|| {
        let img = &deref(image, "image")?.0;
        out(buf, "buf")?;
        let data = img.data();
        if len != data.len() {
            return Err(Error::Shape(format!("buffer holds {len} values, image has {}", data.len())).into());
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(data);
        Ok(())
    })
}

/// PSNR of `estimate` against `reference` in dB.
///
/// # Safety
/// Both handles must be live; `out_db` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_psnr(
    estimate: *const PflashImage,
    reference: *const PflashImage,
    peak: f64,
    out_db: *mut f64,
) -> PflashStatus {
    guard(|| {
        let v = metrics::psnr(&deref(estimate, "estimate")?.0, &deref(reference, "reference")?.0, peak)?;
        *out(out_db, "out_db")? = v;
        Ok(())
    })
}

// ---------------------------------------------------------------- patterns

/// Regular dot lattice with pitch `period`.
///
/// # Safety
/// `out_pattern` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_pattern_regular(
    height: usize,
    width: usize,
    period: usize,
    dot_sigma: f64,
    peak: f64,
    floor_level: f64,
    out_pattern: *mut *mut PflashPattern,
) -> PflashStatus {
    guard(|| {
        let slot = out(out_pattern, "out_pattern")?;
        *slot = boxed(PflashPattern(Pattern::regular(height, width, period, dot_sigma, peak, floor_level)?));
        Ok(())
    })
}

/// Copy of `base` with every dot displaced by up to a pixel.
///
/// # Safety
/// `base` must be a live handle; `out_pattern` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_pattern_jittered(
    base: *const PflashPattern,
    seed: u64,
    out_pattern: *mut *mut PflashPattern,
) -> PflashStatus {
    guard(|| {
        let b = &deref(base, "base")?.0;
        let slot = out(out_pattern, "out_pattern")?;
        *slot = boxed(PflashPattern(Pattern::jittered(b, Seed(seed))?));
        Ok(())
    })
}

/// # Safety
/// `pattern` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pflash_pattern_free(pattern: *mut PflashPattern) {
    if !pattern.is_null() {
        drop(Box::from_raw(pattern));
    }
}

/// Mean pattern intensity.
///
/// # Safety
/// `pattern` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_pattern_occupancy(pattern: *const PflashPattern, out_value: *mut f64) -> PflashStatus {
    guard(|| {
        *out(out_value, "out_value")? = deref(pattern, "pattern")?.0.occupancy();
        Ok(())
    })
}

/// The pattern as a new single-channel image.
///
/// # Safety
/// `pattern` must be a live handle; `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_pattern_image(
    pattern: *const PflashPattern,
    out_image: *mut *mut PflashImage,
) -> PflashStatus {
    guard(|| {
        let img = deref(pattern, "pattern")?.0.image().clone();
        *out(out_image, "out_image")? = boxed(PflashImage(img));
        Ok(())
    })
}

// ---------------------------------------------------------------- geometry and SNR

/// Pattern shift in pixels for a point at `depth`.
///
/// # Safety
/// `rig` must be readable; `out_px` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_disparity(rig: *const PflashRig, depth: f64, out_px: *mut f64) -> PflashStatus {
    guard(|| {
        let r = rig_of(deref(rig, "rig")?)?;
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::InvalidArgument(format!("depth must be positive, got {depth}")).into());
        }
        *out(out_px, "out_px")? = r.disparity_at(depth);
        Ok(())
    })
}

/// Upper bound on the PF/UF input-SNR ratio for a pattern with the given
/// occupancy (linear, not dB).
///
/// # Safety
/// `out_ratio` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_theoretical_gain(occupancy: f64, out_ratio: *mut f64) -> PflashStatus {
    guard(|| {
        *out(out_ratio, "out_ratio")? = snr::theoretical_gain(occupancy)?;
        Ok(())
    })
}

/// Closed-form SNRs of one UF pixel, a PF dot pixel and an M x M binned UF
/// patch, written to `out3` in that order.
///
/// # Safety
/// `out3` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn pflash_snr_closed_form(s: f64, sigma_r: f64, m: usize, out3: *mut f64) -> PflashStatus {
    guard(|| {
        let v = [
            snr::snr_uniform(s, sigma_r)?,
            snr::snr_patterned(s, sigma_r, m)?,
            snr::snr_uniform_binned(s, sigma_r, m)?,
        ];
        out(out3, "out3")?;
        std::slice::from_raw_parts_mut(out3, 3).copy_from_slice(&v);
        Ok(())
    })
}

// ---------------------------------------------------------------- pipeline

/// Noisy capture of a scene planar at `distance`.
///
/// # Safety
/// Handles and structs must be live and readable; `out_capture` writable.
#[no_mangle]
pub unsafe extern "C" fn pflash_render(
    scene: *const PflashImage,
    pattern: *const PflashPattern,
    rig: *const PflashRig,
    noise: *const PflashNoise,
    distance: f64,
    flash: PflashFlash,
    seed: u64,
    out_capture: *mut *mut PflashImage,
) -> PflashStatus {
    guard(|| {
        let a = &deref(scene, "scene")?.0;
        let p = &deref(pattern, "pattern")?.0;
        let r = rig_of(deref(rig, "rig")?)?;
        let n = noise_of(deref(noise, "noise")?);
        let slot = out(out_capture, "out_capture")?;
        let depth = PlanarMap::filled(a.height(), a.width(), MapKind::Depth, distance)?;
        let att = Attenuation::Uniform { distance };
        let cap = match flash {
            PflashFlash::Patterned => render_pf(a, &depth, p, &r, att, &n, Seed(seed))?,
            PflashFlash::Uniform => render_uf(a, &depth, p, &r, att, &n, Seed(seed))?,
        };
        *slot = boxed(PflashImage(cap));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pflash_recon_options_default() -> PflashReconOptions {
    let c = ReconConfig::default();
    PflashReconOptions {
        block_size: c.block_size,
        search_range: c.search_range,
        search_center: c.search_center,
        tv_weight: c.tv_weight,
        max_iters: c.max_iters,
        outer_rounds: c.outer_rounds,
        clamp_aware: c.clamp_aware as i32,
    }
}

fn config_of(o: &PflashReconOptions, distance: f64, noise: Option<&PflashNoise>) -> ReconConfig {
    ReconConfig {
        block_size: o.block_size,
        search_range: o.search_range,
        search_center: o.search_center,
        tv_weight: o.tv_weight,
        max_iters: o.max_iters,
        outer_rounds: o.outer_rounds,
        clamp_aware: o.clamp_aware != 0,
        distance,
        noise: noise.map(noise_of),
        ..ReconConfig::default()
    }
}

/// Recovers the albedo of a capture. For `Patterned`, `out_disparity`
/// (optional, may be null) receives the disparity map as a one-channel
/// image. `rig` (optional) with `near <= far` centres the disparity
/// search on that depth range; `noise` (optional) enables noise-aware
/// fitting.
///
/// # Safety
/// Non-optional handles must be live; out pointers writable when non-null.
#[no_mangle]
pub unsafe extern "C" fn pflash_reconstruct(
    capture: *const PflashImage,
    pattern: *const PflashPattern,
    flash: PflashFlash,
    distance: f64,
    options: *const PflashReconOptions,
    rig: *const PflashRig,
    near: f64,
    far: f64,
    noise: *const PflashNoise,
    out_image: *mut *mut PflashImage,
    out_disparity: *mut *mut PflashImage,
) -> PflashStatus {
    guard(|| {
        let cap = &deref(capture, "capture")?.0;
        let p = &deref(pattern, "pattern")?.0;
        let cfg = config_of(deref(options, "options")?, distance, noise.as_ref());
        let slot = out(out_image, "out_image")?;
        let prior = match rig.as_ref() {
            Some(r) => Some(RigPrior::new(rig_of(r)?, near, far)),
            None => None,
        };
        match flash {
            PflashFlash::Patterned => {
                let res = joint_reconstruct(cap, p, prior.as_ref(), &cfg)?;
                if let Some(d) = out_disparity.as_mut() {
                    *d = boxed(PflashImage(res.disparity_hat.to_image()));
                }
                *slot = boxed(PflashImage(res.image_hat));
            }
            PflashFlash::Uniform => {
                let img = reconstruct_uf(cap, &p.channel_means(), p.period_m(), &cfg)?;
                if let Some(d) = out_disparity.as_mut() {
                    *d = ptr::null_mut();
                }
                *slot = boxed(PflashImage(img));
            }
        }
        Ok(())
    })
}
