//! C interface to `anchorseg`.
//!
//! Every function returns an [`AsgStatus`]. On failure a message describing
//! the error is kept per thread and can be read with
//! [`asg_last_error_message`]. Maps and models are opaque heap handles that
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use anchorseg::anchors::{anchor_loss, AnchorPair, AnchorSource};
use anchorseg::cues::color_cue;
use anchorseg::diffusion::{pair_objective, DiffusionMargins, FeatureMap, FrameInputs, LossTerms};
use anchorseg::eval::{otsu_binarize, Overlap};
use anchorseg::frame::{FrameSample, RgbImage};
use anchorseg::nn::{Checkpoint, UNet};
use anchorseg::{BinaryMask, Error, ImageShape, ProbMap};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Data = 5,
    Checkpoint = 6,
    Numerical = 7,
    Panic = 8,
}

/// Opaque probability map with values in `[0, 1]`.
pub struct AsgProbMap(ProbMap);

/// Opaque trained segmentation network.
pub struct AsgModel(UNet);

/// Objective components for one frame pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AsgLosses {
    pub anchor_a: f64,
    pub anchor_b: f64,
    pub diffusion_fg: f64,
    pub diffusion_bg: f64,
    pub total: f64,
    /// Non-zero when a pooled region descriptor was the zero vector.
    pub degenerate: i32,
}

/// Borrowed inputs for one frame of a pair. `features` is pixel-major,
/// `height * width * channels` values.
#[repr(C)]
pub struct AsgFrameInputs {
    pub prediction: *const AsgProbMap,
    pub features: *const f64,
    pub channels: usize,
    pub positive: *const AsgProbMap,
    pub negative: *const AsgProbMap,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|b| *b != 0));
    });
}

fn status_of(err: &Error) -> AsgStatus {
    match err {
        Error::ShapeMismatch { .. } => AsgStatus::ShapeMismatch,
        Error::InvalidArgument(_) | Error::Empty(_) | Error::NonBinary(_) | Error::Config(_) => {
            AsgStatus::InvalidArgument
        }
        Error::Io { .. } => AsgStatus::Io,
        Error::Checkpoint(_) | Error::MissingWeights { .. } => AsgStatus::Checkpoint,
        Error::Numerical(_) => AsgStatus::Numerical,
        _ => AsgStatus::Data,
    }
}

struct Failure(AsgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AsgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AsgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AsgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AsgStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn shape(height: usize, width: usize) -> Result<ImageShape, Failure> {
    Ok(ImageShape::new(height, width)?)
}

fn boxed_map(map: ProbMap) -> *mut AsgProbMap {
    Box::into_raw(Box::new(AsgProbMap(map)))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn asg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Creates a map from `height * width` row-major values in `[0, 1]`.
///
/// # Safety
/// `values` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_prob_map_new(
    height: usize,
    width: usize,
    values: *const f64,
    out: *mut *mut AsgProbMap,
) -> AsgStatus {
    guard(|| {
        let s = shape(height, width)?;
        let v = slice(values, s.len(), "values")?;
        let map = ProbMap::new(s, v.to_vec())?;
        put(out, boxed_map(map), "out")
    })
}

/// # Safety
/// `map` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asg_prob_map_free(map: *mut AsgProbMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `map` must be a live handle; `height` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_prob_map_shape(
    map: *const AsgProbMap,
    height: *mut usize,
    width: *mut usize,
) -> AsgStatus {
    guard(|| {
        let s = get(map, "map")?.0.shape();
        put(height, s.height, "height")?;
        put(width, s.width, "width")
    })
}

/// Copies the values into `out`, which must hold exactly `len == height * width` doubles.
///
/// # Safety
/// `map` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn asg_prob_map_values(map: *const AsgProbMap, out: *mut f64, len: usize) -> AsgStatus {
    guard(|| {
        let values = get(map, "map")?.0.values();
        if len != values.len() {
            return Err(Failure(
                AsgStatus::InvalidArgument,
                format!("buffer holds {len} values, map has {}", values.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), out, len);
        Ok(())
    })
}

unsafe fn rgb_image(height: usize, width: usize, rgb: *const u8) -> Result<RgbImage, Failure> {
    let s = shape(height, width)?;
    let bytes = slice(rgb, s.len() * 3, "rgb")?;
    Ok(RgbImage::new(s, bytes.iter().map(|v| f32::from(*v) / 255.0).collect())?)
}

/// Color cue of an interleaved 8-bit RGB image.
///
/// # Safety
/// `rgb` must point to `height * width * 3` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_color_cue(
    height: usize,
    width: usize,
    rgb: *const u8,
    out: *mut *mut AsgProbMap,
) -> AsgStatus {
    guard(|| {
        let img = rgb_image(height, width, rgb)?;
        let map = color_cue(&FrameSample::new("ffi", 0, img));
        put(out, boxed_map(map), "out")
    })
}

/// Fuses `count` cue maps: `positive = prod c`, `negative = prod (1 - c)`.
///
/// # Safety
/// `cues` must point to `count` live handles; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_fuse_anchors(
    cues: *const *const AsgProbMap,
    count: usize,
    positive: *mut *mut AsgProbMap,
    negative: *mut *mut AsgProbMap,
) -> AsgStatus {
    guard(|| {
        let handles = slice(cues, count, "cues")?;
        let first = handles.first().ok_or_else(|| {
            Failure(AsgStatus::InvalidArgument, "at least one cue is required".into())
        })?;
        let s = get(*first, "cue")?.0.shape();
        let mut pos = vec![1.0; s.len()];
        let mut neg = vec![1.0; s.len()];
        for h in handles {
            let cue = &get(*h, "cue")?.0;
            s.ensure_same(&cue.shape())?;
            for ((p, n), c) in pos.iter_mut().zip(neg.iter_mut()).zip(cue.values()) {
                *p *= c;
                *n *= 1.0 - c;
            }
        }
        let pair = AnchorPair::new(ProbMap::new(s, pos)?, ProbMap::new(s, neg)?, AnchorSource::FusedCues)?;
        put(positive, boxed_map(pair.positive().clone()), "positive")?;
        put(negative, boxed_map(pair.negative().clone()), "negative")
    })
}

unsafe fn anchor_pair(pos: *const AsgProbMap, neg: *const AsgProbMap) -> Result<AnchorPair, Failure> {
    let pos = get(pos, "positive")?.0.clone();
    let neg = get(neg, "negative")?.0.clone();
    Ok(AnchorPair::new(pos, neg, AnchorSource::FusedCues)?)
}

/// Anchor loss of a prediction map.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_anchor_loss(
    prediction: *const AsgProbMap,
    positive: *const AsgProbMap,
    negative: *const AsgProbMap,
    out: *mut f64,
) -> AsgStatus {
    guard(|| {
        let pred = &get(prediction, "prediction")?.0;
        let loss = anchor_loss(pred, &anchor_pair(positive, negative)?)?;
        put(out, loss, "out")
    })
}

/// All objective components for a frame pair with the given margins.
///
/// # Safety
/// `a` and `b` must point to valid inputs whose feature buffers hold
/// `height * width * channels` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_pair_losses(
    a: *const AsgFrameInputs,
    b: *const AsgFrameInputs,
    margin_fg: f64,
    margin_bg: f64,
    out: *mut AsgLosses,
) -> AsgStatus {
    guard(|| {
        let margins = DiffusionMargins::new(margin_fg, margin_bg)?;
        let (a, b) = (get(a, "a")?, get(b, "b")?);
        let load = |f: &AsgFrameInputs| -> Result<(&ProbMap, FeatureMap, AnchorPair), Failure> {
            let pred = &get(f.prediction, "prediction")?.0;
            let s = pred.shape();
            let values = slice(f.features, s.len() * f.channels, "features")?;
            let features = FeatureMap::new(s, f.channels, values.to_vec())?;
            Ok((pred, features, anchor_pair(f.positive, f.negative)?))
        };
        let (pa, fa, aa) = load(a)?;
        let (pb, fb, ab) = load(b)?;
        let r = pair_objective(
            &FrameInputs {
                prediction: pa,
                features: &fa,
                anchors: &aa,
            },
            &FrameInputs {
                prediction: pb,
                features: &fb,
                anchors: &ab,
            },
            margins,
            LossTerms::FULL,
        )?;
        let l = r.loss;
        put(
            out,
            AsgLosses {
                anchor_a: l.anchor_a,
                anchor_b: l.anchor_b,
                diffusion_fg: l.diffusion_fg,
                diffusion_bg: l.diffusion_bg,
                total: l.total,
                degenerate: i32::from(l.degenerate),
            },
            "out",
        )
    })
}

/// Otsu binarization. Writes the threshold and `height * width` mask bytes (0 or 1).
///
/// # Safety
/// `map` must be live; `mask` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn asg_otsu(
    map: *const AsgProbMap,
    threshold: *mut f64,
    mask: *mut u8,
    len: usize,
) -> AsgStatus {
    guard(|| {
        let map = &get(map, "map")?.0;
        if len != map.shape().len() {
            return Err(Failure(
                AsgStatus::InvalidArgument,
                format!("mask buffer holds {len} bytes, map has {} pixels", map.shape().len()),
            ));
        }
        let (m, t) = otsu_binarize(map)?;
        put(threshold, t.threshold, "threshold")?;
        if mask.is_null() {
            return Err(null("mask"));
        }
        std::ptr::copy_nonoverlapping(m.values().as_ptr(), mask, len);
        Ok(())
    })
}

/// IoU and Dice of two binary masks of `len` bytes (any non-zero byte is foreground).
///
/// # Safety
/// Both masks must point to `len` bytes; `iou` and `dice` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_iou_dice(
    predicted: *const u8,
    truth: *const u8,
    len: usize,
    iou: *mut f64,
    dice: *mut f64,
) -> AsgStatus {
    guard(|| {
        let s = shape(1, len)?;
        let bits = |p: *const u8, what: &str| -> Result<BinaryMask, Failure> {
            let v = slice(p, len, what)?;
            Ok(BinaryMask::from_bools(s, v.iter().map(|b| *b != 0))?)
        };
        let o = Overlap::between(&bits(predicted, "predicted")?, &bits(truth, "truth")?)?;
        put(iou, o.iou(), "iou")?;
        put(dice, o.dice(), "dice")
    })
}

/// Loads a checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_model_load(path: *const c_char, out: *mut *mut AsgModel) -> AsgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(AsgStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path))?;
        put(out, Box::into_raw(Box::new(AsgModel(ck.network))), "out")
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asg_model_free(model: *mut AsgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Foreground probability map of an interleaved 8-bit RGB frame.
///
/// # Safety
/// `model` must be live, `rgb` must point to `height * width * 3` bytes and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asg_model_predict(
    model: *const AsgModel,
    height: usize,
    width: usize,
    rgb: *const u8,
    out: *mut *mut AsgProbMap,
) -> AsgStatus {
    guard(|| {
        let net = &get(model, "model")?.0;
        let img = rgb_image(height, width, rgb)?;
        let map = net.predict(&FrameSample::new("ffi", 0, img))?;
        put(out, boxed_map(map), "out")
    })
}
