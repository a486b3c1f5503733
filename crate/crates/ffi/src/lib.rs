//! C ABI over `moe-gating`.
//!
//! Models are opaque heap handles created by `*_load` / `*_new` and released
//! with the matching `*_free`. Every fallible call returns a [`MoeStatus`];
//! on failure the message is kept per thread and read with
//! [`moe_last_error`]. Panics are caught at the boundary and reported as
//! `MOE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use moe_gating::data::Image;
use moe_gating::expert::ExpertModel;
use moe_gating::gating::{concat, ConcatenatedLogits, DecisionPath, ExpertLogits, GatingDecision, Mixture, Statistic};
use moe_gating::pan::upan::sc2_decide;
use moe_gating::pan::{coordinate, sc1_decide, PanModel};
use moe_gating::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    /// The statistic has no answer for this input (e.g. all logits zero).
    Undefined = 7,
    IncompatibleFeatures = 8,
    Config = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoeStatistic {
    Argmax = 0,
    Ratio = 1,
    OverallRatio = 2,
    Q3Diff = 3,
    Std = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoeDecisionPath {
    Statistic = 0,
    ExclusivePan = 1,
    Fallback = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoeDecision {
    pub expert_id: usize,
    pub local_class: usize,
    pub global_class: usize,
    pub path: MoeDecisionPath,
}

/// Opaque trained LeNet5 expert.
pub struct MoeExpert(ExpertModel);

/// Opaque ordered set of experts with contiguous global labels.
pub struct MoeMixture(Mixture);

/// Opaque pattern attribution network (per-expert or universal).
pub struct MoePan(PanModel);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(MoeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => MoeStatus::Shape,
            Error::InvalidArgument(_) => MoeStatus::InvalidArgument,
            Error::Io { .. } => MoeStatus::Io,
            Error::Format { .. } | Error::Json(_) => MoeStatus::Format,
            Error::NonFinite(_) => MoeStatus::NonFinite,
            Error::Undefined(_) => MoeStatus::Undefined,
            Error::IncompatibleFeatures(_) => MoeStatus::IncompatibleFeatures,
            Error::Config(_) => MoeStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MoeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MoeStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MoeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MoeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            MoeStatus::Panic
        }
    }
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

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(v);
    Ok(())
}

fn statistic(s: MoeStatistic) -> Statistic {
    match s {
        MoeStatistic::Argmax => Statistic::Argmax,
        MoeStatistic::Ratio => Statistic::Ratio,
        MoeStatistic::OverallRatio => Statistic::OverallRatio,
        MoeStatistic::Q3Diff => Statistic::Q3Diff,
        MoeStatistic::Std => Statistic::Std,
    }
}

fn decision(d: GatingDecision) -> MoeDecision {
    MoeDecision {
        expert_id: d.expert_id,
        local_class: d.local_class,
        global_class: d.global_class,
        path: match d.path {
            DecisionPath::Statistic => MoeDecisionPath::Statistic,
            DecisionPath::ExclusivePan => MoeDecisionPath::ExclusivePan,
            DecisionPath::Fallback => MoeDecisionPath::Fallback,
        },
    }
}

unsafe fn concatenated(
    logits: *const f32,
    class_counts: *const usize,
    n_experts: usize,
) -> Result<ConcatenatedLogits, Failure> {
    if n_experts == 0 {
        return Err(invalid("n_experts is 0"));
    }
    let counts = slice(class_counts, n_experts, "class_counts")?;
    let total: usize = counts.iter().sum();
    let flat = slice(logits, total, "logits")?;
    let mut parts = Vec::with_capacity(n_experts);
    let mut start = 0;
    for (k, &n) in counts.iter().enumerate() {
        parts.push(ExpertLogits {
            expert_id: k,
            global_offset: start,
            logits: &flat[start..start + n],
        });
        start += n;
    }
    Ok(concat(&parts)?)
}

unsafe fn image_arg(
    pixels: *const u8,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Image, Failure> {
    let n = channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| invalid("image dimensions overflow"))?;
    let px = slice(pixels, n, "pixels")?;
    Ok(Image::new(channels, height, width, px.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn moe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the buffer size needed
/// for the full message including the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn moe_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Naive gating over already concatenated logits. `logits` holds
/// `sum(class_counts)` values, expert by expert.
///
/// # Safety
/// Pointers must be valid for the lengths implied by `n_experts` and
/// `class_counts`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_decide(
    stat: MoeStatistic,
    logits: *const f32,
    class_counts: *const usize,
    n_experts: usize,
    out: *mut MoeDecision,
) -> MoeStatus {
    guard(|| {
        let c = concatenated(logits, class_counts, n_experts)?;
        let d = statistic(stat).decide(&c)?;
        write_out(out, decision(d))
    })
}

/// Coordinator rule over concatenated logits and one attribution flag per
/// expert (non-zero means the expert claims the input).
///
/// # Safety
/// As for [`moe_decide`]; `belongs` must hold `n_experts` bytes.
#[no_mangle]
pub unsafe extern "C" fn moe_coordinate(
    logits: *const f32,
    class_counts: *const usize,
    n_experts: usize,
    belongs: *const u8,
    out: *mut MoeDecision,
) -> MoeStatus {
    guard(|| {
        let c = concatenated(logits, class_counts, n_experts)?;
        let b: Vec<bool> = slice(belongs, n_experts, "belongs")?.iter().map(|&v| v != 0).collect();
        write_out(out, decision(coordinate(&c, &b)?))
    })
}

/// Loads an expert checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_expert_load(path: *const c_char, out: *mut *mut MoeExpert) -> MoeStatus {
    guard(|| {
        let m = ExpertModel::load(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(MoeExpert(m))))
    })
}

/// # Safety
/// `expert` must come from [`moe_expert_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moe_expert_free(expert: *mut MoeExpert) {
    if !expert.is_null() {
        drop(Box::from_raw(expert));
    }
}

/// Number of output classes; 0 for a null handle.
///
/// # Safety
/// `expert` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe_expert_class_count(expert: *const MoeExpert) -> usize {
    expert.as_ref().map_or(0, |e| e.0.class_count)
}

/// Channels the expert was trained on (1 or 3); 0 for a null handle.
///
/// # Safety
/// `expert` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe_expert_input_channels(expert: *const MoeExpert) -> usize {
    expert.as_ref().map_or(0, |e| e.0.input_channels)
}

/// Width of the final fully connected activation.
#[no_mangle]
pub extern "C" fn moe_final_fc_width() -> usize {
    moe_gating::expert::FINAL_FC_WIDTH
}

/// Runs one 8-bit image (planar, any of 1/3 channels, at most 32x32)
/// through the expert. `logits_out` receives `class_count` values;
/// `final_fc_out` may be null, otherwise it receives the final FC
/// activation.
///
/// # Safety
/// `pixels` must hold `channels * height * width` bytes; output buffers
/// must hold at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn moe_expert_infer(
    expert: *const MoeExpert,
    pixels: *const u8,
    channels: usize,
    height: usize,
    width: usize,
    logits_out: *mut f32,
    logits_len: usize,
    final_fc_out: *mut f32,
    final_fc_len: usize,
) -> MoeStatus {
    guard(|| {
        let e = &handle(expert, "expert")?.0;
        let img = image_arg(pixels, channels, height, width)?;
        let o = e.infer_with_trace(&[&img])?;
        let logits = o.logits.item(0);
        if logits_len < logits.len() {
            return Err(invalid(format!("logits buffer holds {logits_len}, need {}", logits.len())));
        }
        slice_mut(logits_out, logits.len(), "logits_out")?.copy_from_slice(logits);
        if !final_fc_out.is_null() {
            let fc = o.final_fc.item(0);
            if final_fc_len < fc.len() {
                return Err(invalid(format!("final_fc buffer holds {final_fc_len}, need {}", fc.len())));
            }
            slice_mut(final_fc_out, fc.len(), "final_fc_out")?.copy_from_slice(fc);
        }
        Ok(())
    })
}

/// Builds a mixture from copies of the given experts, in order. The expert
/// handles stay owned by the caller.
///
/// # Safety
/// `experts` must hold `n` live expert handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_new(
    experts: *const *const MoeExpert,
    n: usize,
    out: *mut *mut MoeMixture,
) -> MoeStatus {
    guard(|| {
        let hs = slice(experts, n, "experts")?;
        let models = hs
            .iter()
            .map(|&h| handle(h, "expert").map(|e| e.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let m = Mixture::new(models)?;
        write_out(out, Box::into_raw(Box::new(MoeMixture(m))))
    })
}

/// # Safety
/// `mixture` must come from [`moe_mixture_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_free(mixture: *mut MoeMixture) {
    if !mixture.is_null() {
        drop(Box::from_raw(mixture));
    }
}

/// # Safety
/// `mixture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_len(mixture: *const MoeMixture) -> usize {
    mixture.as_ref().map_or(0, |m| m.0.len())
}

/// # Safety
/// `mixture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_total_classes(mixture: *const MoeMixture) -> usize {
    mixture.as_ref().map_or(0, |m| m.0.total_classes())
}

/// Runs every expert on the image and gates with `stat`.
///
/// # Safety
/// As for [`moe_expert_infer`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_gate(
    mixture: *const MoeMixture,
    stat: MoeStatistic,
    pixels: *const u8,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut MoeDecision,
) -> MoeStatus {
    guard(|| {
        let m = &handle(mixture, "mixture")?.0;
        let img = image_arg(pixels, channels, height, width)?;
        let c = m.trace(&[&img])?.concat(0);
        write_out(out, decision(statistic(stat).decide(&c)?))
    })
}

/// Loads a PAN or UPAN checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_pan_load(path: *const c_char, out: *mut *mut MoePan) -> MoeStatus {
    guard(|| {
        let p = PanModel::load(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(MoePan(p))))
    })
}

/// # Safety
/// `pan` must come from [`moe_pan_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moe_pan_free(pan: *mut MoePan) {
    if !pan.is_null() {
        drop(Box::from_raw(pan));
    }
}

/// Feature width the PAN consumes; 0 for a null handle.
///
/// # Safety
/// `pan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe_pan_feature_width(pan: *const MoePan) -> usize {
    pan.as_ref().map_or(0, |p| p.0.width())
}

/// Attributes one raw (unscaled) feature row.
///
/// # Safety
/// `features` must hold `width` floats; `belongs` and `confidence` must be
/// writable (`confidence` may be null).
#[no_mangle]
pub unsafe extern "C" fn moe_pan_attribute(
    pan: *const MoePan,
    features: *const f32,
    width: usize,
    belongs: *mut u8,
    confidence: *mut f32,
) -> MoeStatus {
    guard(|| {
        let p = &handle(pan, "pan")?.0;
        let a = p.attribute(slice(features, width, "features")?)?;
        write_out(belongs, u8::from(a.belongs))?;
        if !confidence.is_null() {
            confidence.write(a.confidence);
        }
        Ok(())
    })
}

/// SC1: one PAN per expert, in mixture order.
///
/// # Safety
/// `pans` must hold `n_pans` live handles; image arguments as for
/// [`moe_expert_infer`].
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_gate_sc1(
    mixture: *const MoeMixture,
    pans: *const *const MoePan,
    n_pans: usize,
    pixels: *const u8,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut MoeDecision,
) -> MoeStatus {
    guard(|| {
        let m = &handle(mixture, "mixture")?.0;
        let ps = slice(pans, n_pans, "pans")?
            .iter()
            .map(|&h| handle(h, "pan").map(|p| p.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let img = image_arg(pixels, channels, height, width)?;
        write_out(out, decision(sc1_decide(m, &ps, &img)?))
    })
}

/// SC2: one universal PAN shared by every expert.
///
/// # Safety
/// Image arguments as for [`moe_expert_infer`].
#[no_mangle]
pub unsafe extern "C" fn moe_mixture_gate_sc2(
    mixture: *const MoeMixture,
    upan: *const MoePan,
    pixels: *const u8,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut MoeDecision,
) -> MoeStatus {
    guard(|| {
        let m = &handle(mixture, "mixture")?.0;
        let u = &handle(upan, "upan")?.0;
        let img = image_arg(pixels, channels, height, width)?;
        write_out(out, decision(sc2_decide(m, u, &img)?))
    })
}
