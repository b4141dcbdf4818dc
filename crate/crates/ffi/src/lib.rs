//! C ABI over the breathsync engine and analysis kernels.
//!
//! Every function returns a [`BsStatus`]. On failure the message is kept per
//! thread and can be read with [`bs_last_error`]. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use breathsync::breath::{self, DepthNormalizer};
use breathsync::dsp::{self, FilterSpec};
use breathsync::engine::{self, Engine, EnvelopeMode};
use breathsync::physio;
use breathsync::stats;
use breathsync::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    Degenerate = 4,
    NotApplicable = 5,
    BufferTooSmall = 6,
    Failed = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: BsStatus, msg: impl Into<String>) -> BsStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> BsStatus {
    let status = match &e {
        Error::InvalidArgument(_) | Error::Design(_) => BsStatus::InvalidArgument,
        Error::InsufficientData(_) | Error::BlockExcluded(_) | Error::EmptySession => BsStatus::InsufficientData,
        Error::Degenerate(_) => BsStatus::Degenerate,
        Error::NotApplicable(_) => BsStatus::NotApplicable,
        _ => BsStatus::Failed,
    };
    fail(status, e.to_string())
}

/// Run `f`, turning panics into `Panic` and errors into status codes.
fn guard(f: impl FnOnce() -> Result<(), BsStatus>) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(BsStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], BsStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BsStatus::NullPointer, "null input buffer"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, BsStatus> {
    p.as_mut().ok_or_else(|| fail(BsStatus::NullPointer, "null output pointer"))
}

/// Copy `src` into a caller buffer of `cap` entries; `count` always receives
/// the full length.
unsafe fn fill<T: Copy>(src: &[T], dst: *mut T, cap: usize, count: *mut usize) -> Result<(), BsStatus> {
    *out(count)? = src.len();
    if src.len() > cap {
        return Err(fail(
            BsStatus::BufferTooSmall,
            format!("need room for {} values, got {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(fail(BsStatus::NullPointer, "null output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------------------
// envelope engine

pub struct BsEngine(Engine);

fn new_engine(mode: EnvelopeMode, control_rate_hz: f64, handle: *mut *mut BsEngine) -> BsStatus {
    guard(|| {
        let slot = unsafe { out(handle)? };
        let e = Engine::new(mode, control_rate_hz).map_err(from_error)?;
        *slot = Box::into_raw(Box::new(BsEngine(e)));
        Ok(())
    })
}

/// Fixed tempo envelope at 6 breaths per minute.
#[no_mangle]
pub extern "C" fn bs_engine_new_fixed_tempo(control_rate_hz: f64, handle: *mut *mut BsEngine) -> BsStatus {
    new_engine(EnvelopeMode::fixed_tempo(), control_rate_hz, handle)
}

#[no_mangle]
pub extern "C" fn bs_engine_new_personalized_tempo(
    baseline_bpm: f64,
    control_rate_hz: f64,
    handle: *mut *mut BsEngine,
) -> BsStatus {
    new_engine(EnvelopeMode::PersonalizedTempo { baseline_bpm }, control_rate_hz, handle)
}

/// Gain follows breathing depth fed through `bs_engine_push_breath`.
#[no_mangle]
pub extern "C" fn bs_engine_new_personalized_envelope(control_rate_hz: f64, handle: *mut *mut BsEngine) -> BsStatus {
    new_engine(EnvelopeMode::PersonalizedEnvelope, control_rate_hz, handle)
}

/// # Safety
/// `handle` must come from a `bs_engine_new_*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_engine_free(handle: *mut BsEngine) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live engine.
#[no_mangle]
pub unsafe extern "C" fn bs_engine_push_breath(handle: *mut BsEngine, t: f64, value: f64) -> BsStatus {
    guard(|| {
        out(handle)?.0.push_breath(t, value);
        Ok(())
    })
}

/// Gain of the current control tick, then advance.
///
/// # Safety
/// `handle` must be a live engine and `gain` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_engine_tick(handle: *mut BsEngine, gain: *mut f64) -> BsStatus {
    guard(|| {
        let g = out(handle)?.0.tick();
        *out(gain)? = g;
        Ok(())
    })
}

/// # Safety
/// `handle` must be a live engine and `phase` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_engine_phase(handle: *const BsEngine, phase: *mut f64) -> BsStatus {
    guard(|| {
        let e = handle.as_ref().ok_or_else(|| fail(BsStatus::NullPointer, "null engine"))?;
        *out(phase)? = e.0.phase();
        Ok(())
    })
}

/// Tempo of the personalized design for a measured resting rate.
///
/// # Safety
/// `rate_bpm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_personalized_tempo_bpm(baseline_bpm: f64, rate_bpm: *mut f64) -> BsStatus {
    guard(|| {
        let r = engine::effective_rate_bpm(&EnvelopeMode::PersonalizedTempo { baseline_bpm }).map_err(from_error)?;
        *out(rate_bpm)? = r;
        Ok(())
    })
}

/// Tempo-design gain at cycle phase in [0, 1).
///
/// # Safety
/// `gain` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_envelope_gain(phase: f64, gain: *mut f64) -> BsStatus {
    guard(|| {
        *out(gain)? = engine::envelope_gain(phase).map_err(from_error)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// depth normalizer

pub struct BsDepthNormalizer(DepthNormalizer);

/// # Safety
/// `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_depth_normalizer_new(
    window_s: f64,
    epsilon: f64,
    handle: *mut *mut BsDepthNormalizer,
) -> BsStatus {
    guard(|| {
        let slot = out(handle)?;
        if !(window_s > 0.0 && window_s.is_finite() && epsilon >= 0.0) {
            return Err(fail(BsStatus::InvalidArgument, "window must be positive and epsilon non-negative"));
        }
        *slot = Box::into_raw(Box::new(BsDepthNormalizer(DepthNormalizer::new(window_s, epsilon))));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `bs_depth_normalizer_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_depth_normalizer_free(handle: *mut BsDepthNormalizer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be live and `depth` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_depth_normalizer_push(
    handle: *mut BsDepthNormalizer,
    t: f64,
    value: f64,
    depth: *mut f64,
) -> BsStatus {
    guard(|| {
        let d = out(handle)?.0.push(t, value);
        *out(depth)? = d;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// batch kernels

/// Zero-phase Butterworth low-pass of `n` samples into `y` (length `n`).
///
/// # Safety
/// `x` and `y` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn bs_lowpass_zero_phase(
    x: *const f64,
    n: usize,
    order: usize,
    cutoff_hz: f64,
    fs_hz: f64,
    y: *mut f64,
) -> BsStatus {
    guard(|| {
        let x = slice(x, n)?;
        let f = dsp::design_butterworth(&FilterSpec::lowpass(order, cutoff_hz, fs_hz)).map_err(from_error)?;
        let filtered = dsp::filter_zero_phase(x, &f);
        let mut count = 0;
        fill(&filtered, y, n, &mut count)
    })
}

/// Indices of peaks with at least `min_prominence` on both sides.
///
/// # Safety
/// `x` must hold `n` values, `idx` `cap` entries, `count` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_prominent_peaks(
    x: *const f64,
    n: usize,
    min_prominence: f64,
    idx: *mut usize,
    cap: usize,
    count: *mut usize,
) -> BsStatus {
    guard(|| {
        let x = slice(x, n)?;
        fill(&breath::prominent_peaks(x, min_prominence), idx, cap, count)
    })
}

/// R-peak sample indices of a raw ECG sampled at `fs_hz`.
///
/// # Safety
/// `x` must hold `n` values, `idx` `cap` entries, `count` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_detect_r_peaks(
    x: *const f64,
    n: usize,
    fs_hz: f64,
    idx: *mut usize,
    cap: usize,
    count: *mut usize,
) -> BsStatus {
    guard(|| {
        let x = slice(x, n)?;
        let peaks = physio::detect_r_peaks(x, fs_hz).map_err(from_error)?;
        fill(&peaks, idx, cap, count)
    })
}

/// One-way ANOVA over `k` groups stored back to back in `values`, with
/// `sizes[i]` values in group `i`.
///
/// # Safety
/// `sizes` must hold `k` entries and `values` their sum.
#[no_mangle]
pub unsafe extern "C" fn bs_one_way_anova(
    values: *const f64,
    sizes: *const usize,
    k: usize,
    f_stat: *mut f64,
    p_value: *mut f64,
) -> BsStatus {
    guard(|| {
        if k > 0 && sizes.is_null() {
            return Err(fail(BsStatus::NullPointer, "null sizes"));
        }
        let sizes = if k == 0 { &[][..] } else { std::slice::from_raw_parts(sizes, k) };
        let all = slice(values, sizes.iter().sum())?;
        let mut groups = Vec::with_capacity(k);
        let mut at = 0;
        for &s in sizes {
            groups.push(&all[at..at + s]);
            at += s;
        }
        let r = stats::one_way_anova(&groups).map_err(from_error)?;
        *out(f_stat)? = r.f_stat;
        *out(p_value)? = r.p_value;
        Ok(())
    })
}
