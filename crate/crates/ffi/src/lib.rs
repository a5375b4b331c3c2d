//! C ABI over `recipe-diffusion`.
//!
//! Every fallible function returns an [`RdStatus`]; on failure a description is kept per
//! thread and can be read with [`rd_last_error_message`]. Models and point clouds are
//! opaque handles released with their matching `_free` function. Masks cross the boundary
//! as `uint8_t` arrays of 0/1, one byte per ingredient; batches are row-major.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the stated number of elements, and
//! handles must come from the matching constructor and not be used after `_free`.
//! Null pointers are reported as `RD_STATUS_NULL_POINTER`, never dereferenced.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use recipe_diffusion::continuous::{mixture_score, NoiseSchedule, TrainingCloud};
use recipe_diffusion::discovery::discrete_discovery;
use recipe_diffusion::discrete::{
    closed_form_marginal, distance_class_prob, FlipSchedule, ProbabilityTable, ReverseSampler,
};
use recipe_diffusion::mask_model::{sample_masks, MaskModel, RetentionSchedule};
use recipe_diffusion::rng::stream;
use recipe_diffusion::value_model::{sample_weights_batch, ValueModel};
use recipe_diffusion::vocab::{IngredientVocabulary, Normalization};
use recipe_diffusion::{BitMask, Error};

/// Result codes. `RD_STATUS_OK` is zero; everything else is an error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    Numerical = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RdStatus {
    match e {
        Error::LengthMismatch { .. } | Error::VocabularyMismatch(_) => RdStatus::LengthMismatch,
        Error::Io(_) | Error::Parse { .. } | Error::Csv(_) => RdStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => RdStatus::Checkpoint,
        Error::ScoreUndefined | Error::Diverged { .. } | Error::DegenerateFit(_) | Error::Internal(_) => {
            RdStatus::Numerical
        }
        _ => RdStatus::InvalidArgument,
    }
}

struct Failure(RdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RdStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(RdStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RdStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RdStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

fn check_len(expected: usize, actual: usize) -> Result<(), Failure> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual }.into())
    }
}

fn to_mask(bits: &[u8]) -> Result<BitMask, Failure> {
    Ok(BitMask::new(bits.to_vec())?)
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Message for the last failed call on this thread, or NULL if the last call succeeded.
/// The pointer stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Exact hypercube chain.

/// q_t = ½(1 − (1 − 2β)^t), the probability that a bit differs from its start after t steps.
#[no_mangle]
pub unsafe extern "C" fn rd_cumulative_flip(beta: f64, t: usize, out_q: *mut f64) -> RdStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&beta) {
            return Err(invalid(format!("beta must lie in [0,1], got {beta}")));
        }
        *out(out_q, "out_q")? = recipe_diffusion::discrete::cumulative_flip(beta, t);
        Ok(())
    })
}

/// Probability that one step of independent flips changes exactly `d` of `n` bits.
#[no_mangle]
pub unsafe extern "C" fn rd_distance_class_prob(n: usize, d: usize, beta: f64, out_p: *mut f64) -> RdStatus {
    guard(|| {
        *out(out_p, "out_p")? = distance_class_prob(n, d, beta)?;
        Ok(())
    })
}

/// Distribution over all 2^n states after `t` steps from `x0`. State index k has bit i
/// equal to ingredient i. `out_probs` must hold 2^n values.
#[no_mangle]
pub unsafe extern "C" fn rd_closed_form_marginal(
    x0: *const u8,
    n: usize,
    t: usize,
    beta: f64,
    out_probs: *mut f64,
    out_len: usize,
) -> RdStatus {
    guard(|| {
        let x0 = to_mask(slice(x0, n, "x0")?)?;
        let p = closed_form_marginal(&x0, t, beta)?;
        check_len(p.probs().len(), out_len)?;
        slice_mut(out_probs, out_len, "out_probs")?.copy_from_slice(p.probs());
        Ok(())
    })
}

/// Terminal states of `count` exact reverse trajectories started uniformly at random,
/// written as `count` × n bits. `p0` holds the 2^n data probabilities.
#[no_mangle]
pub unsafe extern "C" fn rd_exact_reverse_sample(
    p0: *const f64,
    n: usize,
    beta: f64,
    steps: usize,
    count: usize,
    seed: u64,
    out_bits: *mut u8,
    out_len: usize,
) -> RdStatus {
    guard(|| {
        if n == 0 || n > recipe_diffusion::discrete::MAX_EXACT_DIM {
            return Err(invalid(format!(
                "n must lie in 1..={}",
                recipe_diffusion::discrete::MAX_EXACT_DIM
            )));
        }
        let table = ProbabilityTable::new(n, slice(p0, 1 << n, "p0")?.to_vec())?;
        let sampler = ReverseSampler::new(&table, FlipSchedule::new(beta, steps)?)?;
        check_len(count * n, out_len)?;
        let dst = slice_mut(out_bits, out_len, "out_bits")?;
        for (i, row) in dst.chunks_mut(n.max(1)).enumerate() {
            let mut rng = stream(seed, i as u64);
            let start = BitMask::from_index(rand::Rng::gen_range(&mut rng, 0..1usize << n), n);
            let path = sampler.trajectory(&start, &mut rng)?;
            row.copy_from_slice(path.last().expect("non-empty trajectory").bits());
        }
        Ok(())
    })
}

/// Discovery probabilities of one target state under the forward chain.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RdDiscovery {
    pub p_path: f64,
    pub p_end: f64,
    pub hits_path: u64,
    pub hits_end: u64,
    /// Samples for a 95% chance of discovery; 0 when the target was never reached.
    pub n95_path: u64,
    pub n95_end: u64,
}

#[no_mangle]
pub unsafe extern "C" fn rd_discrete_discovery(
    p0: *const f64,
    n: usize,
    target: *const u8,
    beta: f64,
    steps: usize,
    trials: u64,
    seed: u64,
    out_result: *mut RdDiscovery,
) -> RdStatus {
    guard(|| {
        if n == 0 || n > recipe_diffusion::discrete::MAX_EXACT_DIM {
            return Err(invalid(format!(
                "n must lie in 1..={}",
                recipe_diffusion::discrete::MAX_EXACT_DIM
            )));
        }
        let table = ProbabilityTable::new(n, slice(p0, 1 << n, "p0")?.to_vec())?;
        let target = to_mask(slice(target, n, "target")?)?;
        let r = discrete_discovery(&table, &target, &FlipSchedule::new(beta, steps)?, trials, seed)?;
        *out(out_result, "out_result")? = RdDiscovery {
            p_path: r.p_path,
            p_end: r.p_end,
            hits_path: r.hits_path,
            hits_end: r.hits_end,
            n95_path: r.n95_path.unwrap_or(0),
            n95_end: r.n95_end.unwrap_or(0),
        };
        Ok(())
    })
}

// Continuous tier.

/// Variance-preserving schedule with linear β(t) on [0, total_time].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RdNoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub total_time: f64,
    pub steps: usize,
}

impl RdNoiseSchedule {
    fn build(&self) -> Result<NoiseSchedule, Failure> {
        Ok(NoiseSchedule::new(
            self.beta_min,
            self.beta_max,
            self.total_time,
            self.steps,
        )?)
    }
}

/// Set of training points in normalized weight space.
pub struct RdCloud(TrainingCloud);

/// Copies `count` × `dim` row-major points into a new cloud.
#[no_mangle]
pub unsafe extern "C" fn rd_cloud_new(
    points: *const f64,
    count: usize,
    dim: usize,
    out_cloud: *mut *mut RdCloud,
) -> RdStatus {
    guard(|| {
        let out_cloud = out(out_cloud, "out_cloud")?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let flat = slice(points, count * dim, "points")?;
        let cloud = TrainingCloud::new(flat.chunks(dim).map(<[f64]>::to_vec).collect())?;
        *out_cloud = Box::into_raw(Box::new(RdCloud(cloud)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rd_cloud_free(cloud: *mut RdCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Exact score ∇ log p_t(w) of the noised cloud. `w` and `out_score` hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn rd_mixture_score(
    cloud: *const RdCloud,
    schedule: RdNoiseSchedule,
    w: *const f64,
    dim: usize,
    t: f64,
    out_score: *mut f64,
) -> RdStatus {
    guard(|| {
        let cloud = &cloud.as_ref().ok_or_else(|| null("cloud"))?.0;
        check_len(cloud.dim(), dim)?;
        let s = mixture_score(slice(w, dim, "w")?, t, &schedule.build()?, cloud)?;
        slice_mut(out_score, dim, "out_score")?.copy_from_slice(&s);
        Ok(())
    })
}

// Learned models.

/// Mask model loaded from a checkpoint, with its schedule and vocabulary.
pub struct RdMaskModel {
    model: MaskModel<f32>,
    schedule: RetentionSchedule,
    vocabulary: IngredientVocabulary,
}

/// Value model loaded from a checkpoint, with its schedule and normalization.
pub struct RdValueModel {
    model: ValueModel<f32>,
    schedule: NoiseSchedule,
    normalization: Normalization,
    vocabulary: IngredientVocabulary,
}

#[no_mangle]
pub unsafe extern "C" fn rd_mask_model_load(path: *const c_char, out_model: *mut *mut RdMaskModel) -> RdStatus {
    guard(|| {
        let out_model = out(out_model, "out_model")?;
        let (model, meta) = MaskModel::load(path_arg(path)?)?;
        *out_model = Box::into_raw(Box::new(RdMaskModel {
            model,
            schedule: meta.schedule,
            vocabulary: meta.vocabulary,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rd_mask_model_free(model: *mut RdMaskModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of ingredients, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn rd_mask_model_ingredients(model: *const RdMaskModel) -> usize {
    model.as_ref().map_or(0, |m| m.vocabulary.len())
}

/// Draws `count` masks into `out_bits` (`count` × n bytes).
#[no_mangle]
pub unsafe extern "C" fn rd_mask_model_sample(
    model: *const RdMaskModel,
    count: usize,
    seed: u64,
    out_bits: *mut u8,
    out_len: usize,
) -> RdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = m.vocabulary.len();
        check_len(count * n, out_len)?;
        let masks = sample_masks(&m.model, &m.schedule, count, seed)?;
        let dst = slice_mut(out_bits, out_len, "out_bits")?;
        for (row, mask) in dst.chunks_mut(n).zip(&masks) {
            row.copy_from_slice(mask.bits());
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rd_value_model_load(path: *const c_char, out_model: *mut *mut RdValueModel) -> RdStatus {
    guard(|| {
        let out_model = out(out_model, "out_model")?;
        let (model, meta) = ValueModel::load(path_arg(path)?)?;
        *out_model = Box::into_raw(Box::new(RdValueModel {
            model,
            schedule: meta.schedule,
            normalization: meta.normalization,
            vocabulary: meta.vocabulary,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rd_value_model_free(model: *mut RdValueModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn rd_value_model_ingredients(model: *const RdValueModel) -> usize {
    model.as_ref().map_or(0, |m| m.vocabulary.len())
}

/// Generates weights in grams for `count` masks given as `count` × n bytes. Absent
/// ingredients get 0; `out_clamped` (optional) receives the number of negative weights
/// clamped to zero.
#[no_mangle]
pub unsafe extern "C" fn rd_value_model_generate(
    model: *const RdValueModel,
    masks: *const u8,
    count: usize,
    seed: u64,
    out_grams: *mut f64,
    out_len: usize,
    out_clamped: *mut usize,
) -> RdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = m.vocabulary.len();
        check_len(count * n, out_len)?;
        let masks = slice(masks, count * n, "masks")?
            .chunks(n)
            .map(to_mask)
            .collect::<Result<Vec<_>, _>>()?;
        let w = sample_weights_batch(&m.model, &masks, &m.schedule, &m.normalization, seed)?;
        let dst = slice_mut(out_grams, out_len, "out_grams")?;
        for (row, g) in dst.chunks_mut(n).zip(&w.grams) {
            row.copy_from_slice(g);
        }
        if let Some(c) = out_clamped.as_mut() {
            *c = w.clamped;
        }
        Ok(())
    })
}
