//! C ABI over the verifier and evaluator.
//!
//! Conventions: every fallible call returns a [`ChsStatus`] and writes its
//! result through an out-pointer. On failure the message is kept per thread
//! and can be copied out with [`chs_last_error`]. Handles are opaque and must
//! be released with their matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chartsmith::evaluator::{facet_f1, Facet};
use chartsmith::imaging;
use chartsmith::render::ElementTrace;
use chartsmith::verifier::{
    color_score, hsv_histogram, jaccard, parse_lines, structure_score, tokenize, verify, StopMode, ThresholdSchedule,
    VerifierScores,
};
use image::RgbImage;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DecodeError = 3,
    ParseError = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChsFacet {
    Text = 0,
    Type = 1,
    Color = 2,
    Layout = 3,
}

impl From<ChsFacet> for Facet {
    fn from(f: ChsFacet) -> Self {
        match f {
            ChsFacet::Text => Facet::Text,
            ChsFacet::Type => Facet::Type,
            ChsFacet::Color => Facet::Color,
            ChsFacet::Layout => Facet::Layout,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChsStopMode {
    Average = 0,
    AllPass = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChsFacetF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub gen_count: usize,
    pub matched: usize,
}

/// Number of bins written by [`chs_hsv_histogram`].
pub const CHS_HSV_BINS: usize = 11;

/// Decoded RGB image.
pub struct ChsImage {
    inner: RgbImage,
}

/// Element trace parsed from sidecar JSON.
pub struct ChsTrace {
    inner: ElementTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: ChsStatus, msg: impl Into<String>) -> ChsStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> ChsStatus) -> ChsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ChsStatus::Ok {
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
            fail(ChsStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, ChsStatus> {
    if p.is_null() {
        return Err(fail(ChsStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ChsStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(ChsStatus::NullArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn chs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn chs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Decodes PNG (or any supported format) bytes. Alpha is composited over white.
///
/// # Safety
/// `data` must be valid for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chs_image_decode(data: *const u8, len: usize, out: *mut *mut ChsImage) -> ChsStatus {
    guard(|| {
        non_null!(data, out);
        let bytes = std::slice::from_raw_parts(data, len);
        match imaging::decode_rgb(bytes) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(ChsImage { inner: img }));
                ChsStatus::Ok
            }
            Err(e) => fail(ChsStatus::DecodeError, format!("image does not decode: {e}")),
        }
    })
}

/// Wraps raw interleaved RGB8 pixels; `len` must equal `width * height * 3`.
///
/// # Safety
/// `rgb` must be valid for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chs_image_from_rgb(
    width: u32,
    height: u32,
    rgb: *const u8,
    len: usize,
    out: *mut *mut ChsImage,
) -> ChsStatus {
    guard(|| {
        non_null!(rgb, out);
        let expected = width as usize * height as usize * 3;
        if len != expected || expected == 0 {
            return fail(
                ChsStatus::InvalidArgument,
                format!("expected {expected} bytes for {width}x{height} RGB, got {len}"),
            );
        }
        let pixels = std::slice::from_raw_parts(rgb, len).to_vec();
        let img = RgbImage::from_raw(width, height, pixels).expect("length checked");
        *out = Box::into_raw(Box::new(ChsImage { inner: img }));
        ChsStatus::Ok
    })
}

/// Width in pixels; 0 for null.
///
/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chs_image_width(img: *const ChsImage) -> u32 {
    img.as_ref().map_or(0, |i| i.inner.width())
}

/// Height in pixels; 0 for null.
///
/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chs_image_height(img: *const ChsImage) -> u32 {
    img.as_ref().map_or(0, |i| i.inner.height())
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chs_image_free(img: *mut ChsImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Cosine similarity of the two images' 11-bin HSV histograms, in [0, 1].
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chs_color_score(a: *const ChsImage, b: *const ChsImage, out: *mut f64) -> ChsStatus {
    guard(|| {
        non_null!(a, b, out);
        *out = color_score(&(*a).inner, &(*b).inner);
        ChsStatus::Ok
    })
}

/// Mean SSIM of the grayscale images resized to 256x256, clamped to [0, 1].
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chs_structure_score(a: *const ChsImage, b: *const ChsImage, out: *mut f64) -> ChsStatus {
    guard(|| {
        non_null!(a, b, out);
        *out = structure_score(&(*a).inner, &(*b).inner);
        ChsStatus::Ok
    })
}

/// Writes [`CHS_HSV_BINS`] pixel counts: red, orange, yellow, green, cyan,
/// blue, purple, magenta, white, gray, black.
///
/// # Safety
/// `img` must be live; `counts` writable for 11 values.
#[no_mangle]
pub unsafe extern "C" fn chs_hsv_histogram(img: *const ChsImage, counts: *mut u64) -> ChsStatus {
    guard(|| {
        non_null!(img, counts);
        let h = hsv_histogram(&(*img).inner);
        ptr::copy_nonoverlapping(h.counts.as_ptr(), counts, CHS_HSV_BINS);
        ChsStatus::Ok
    })
}

/// Jaccard index of the token sets of two newline-separated texts.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chs_text_jaccard(a: *const c_char, b: *const c_char, out: *mut f64) -> ChsStatus {
    guard(|| {
        non_null!(out);
        let (a, b) = match (str_arg(a, "a"), str_arg(b, "b")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = jaccard(&tokenize(&parse_lines(a)), &tokenize(&parse_lines(b)));
        ChsStatus::Ok
    })
}

/// Applies the stop rule to three criterion scores at `round`.
///
/// # Safety
/// Out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn chs_verify(
    color: f64,
    text: f64,
    structure: f64,
    mode: ChsStopMode,
    threshold: f64,
    decay_per_round: f64,
    round: u32,
    out_passed: *mut bool,
    out_threshold: *mut f64,
) -> ChsStatus {
    guard(|| {
        non_null!(out_passed, out_threshold);
        let schedule = ThresholdSchedule {
            mode: match mode {
                ChsStopMode::Average => StopMode::Average,
                ChsStopMode::AllPass => StopMode::AllPass,
            },
            base_threshold: threshold,
            decay_per_round,
        };
        if let Err(e) = schedule.validate() {
            return fail(ChsStatus::InvalidArgument, e);
        }
        let d = verify(VerifierScores::new(color, text, structure), &schedule, round);
        *out_passed = d.passed;
        *out_threshold = d.threshold_used;
        ChsStatus::Ok
    })
}

/// Parses sidecar JSON (`{"texts","chart_types","colors","layout"}`).
///
/// # Safety
/// `json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chs_trace_parse(json: *const c_char, out: *mut *mut ChsTrace) -> ChsStatus {
    guard(|| {
        non_null!(out);
        let json = match str_arg(json, "json") {
            Ok(j) => j,
            Err(s) => return s,
        };
        match ElementTrace::from_sidecar_json(json) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(ChsTrace { inner: t }));
                ChsStatus::Ok
            }
            Err(e) => fail(ChsStatus::ParseError, e.to_string()),
        }
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn chs_trace_free(trace: *mut ChsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Multiset precision/recall/F1 of one facet, gold vs. generated.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn chs_facet_f1(
    gold: *const ChsTrace,
    generated: *const ChsTrace,
    facet: ChsFacet,
    out: *mut ChsFacetF1,
) -> ChsStatus {
    guard(|| {
        non_null!(gold, generated, out);
        let f = facet_f1(&(*gold).inner, &(*generated).inner, facet.into());
        *out = ChsFacetF1 {
            precision: f.precision,
            recall: f.recall,
            f1: f.f1,
            gold_count: f.gold_count,
            gen_count: f.gen_count,
            matched: f.matched,
        };
        ChsStatus::Ok
    })
}
