//! C ABI for `ccf-core`.
//!
//! Models are handed out as opaque `CcfModel` pointers and must be released
//! with `ccf_model_free`. Every fallible function returns a `CcfStatus`; on
//! failure `ccf_last_error_message` describes the error for the calling
//! thread until its next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ccf_core::data::parse_sessions;
use ccf_core::evaluation::rank_top_n;
use ccf_core::objectives::softmax_prob;
use ccf_core::trainer::fit;
use ccf_core::{EntityId, Error, LossKind, ParameterStore, TrainConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    MissingEntity = 5,
    InvalidConfig = 6,
    InvalidData = 7,
    Checkpoint = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcfLoss {
    Softmax = 0,
    Hinge = 1,
    SoftmaxExt = 2,
    HingeExt = 3,
}

/// Training hyperparameters. Start from `ccf_train_options_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CcfTrainOptions {
    pub loss: CcfLoss,
    pub dim: usize,
    pub epochs: usize,
    pub shards: usize,
    pub lr: f64,
    pub anneal: f64,
    pub reg_user: f64,
    pub reg_item: f64,
    /// Weight of no-response slack for `CCF_LOSS_HINGE_EXT`.
    pub tradeoff_c: f64,
    pub seed: u64,
    /// Hash table size exponent; 0 keeps a dense store.
    pub hash_bits: u32,
}

/// A trained or loaded model.
pub struct CcfModel {
    store: ParameterStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CcfStatus {
    match e {
        Error::Io(_) => CcfStatus::Io,
        Error::Parse { .. } => CcfStatus::Parse,
        Error::MissingEntity { .. } => CcfStatus::MissingEntity,
        Error::Config(_) => CcfStatus::InvalidConfig,
        Error::Checkpoint(_) => CcfStatus::Checkpoint,
        _ => CcfStatus::InvalidData,
    }
}

struct Failure(CcfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CcfStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CcfStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CcfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(p: *const CcfModel) -> Result<&'a CcfModel, Failure> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ccf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file into a new model written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ccf_model_load(path: *const c_char, out: *mut *mut CcfModel) -> CcfStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let store = ParameterStore::load(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(CcfModel { store })), "out")
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ccf_model_save(model: *const CcfModel, path: *const c_char) -> CcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = text(path, "path")?;
        m.store.save(Path::new(path))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ccf_model_free(model: *mut CcfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimensionality, or 0 for a null model.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ccf_model_dim(model: *const CcfModel) -> usize {
    model.as_ref().map_or(0, |m| m.store.dim())
}

/// Utility of `item` for `user`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ccf_model_utility(
    model: *const CcfModel,
    user: *const c_char,
    item: *const c_char,
    out: *mut f64,
) -> CcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let r = m.store.utility(text(user, "user")?, text(item, "item")?)?;
        write_out(out, r, "out")
    })
}

/// Ranks `candidates` for `user` and writes the best `n` (fewer if there
/// are fewer candidates) as indices into `candidates` with their scores.
/// `out_indices` and `out_scores` must hold at least `n` values.
///
/// # Safety
/// `candidates` must point to `n_candidates` NUL-terminated strings; output
/// buffers must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ccf_model_rank(
    model: *const CcfModel,
    user: *const c_char,
    candidates: *const *const c_char,
    n_candidates: usize,
    n: usize,
    out_indices: *mut usize,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> CcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let user = text(user, "user")?;
        if candidates.is_null() || out_indices.is_null() || out_scores.is_null() {
            return Err(null("candidate or output buffer"));
        }
        let names = (0..n_candidates)
            .map(|k| text(*candidates.add(k), "candidate").map(EntityId::from))
            .collect::<Result<Vec<_>, _>>()?;
        let ranked = rank_top_n(&m.store, user, &names, n)?;
        for (k, s) in ranked.iter().enumerate() {
            let idx = names.iter().position(|c| *c == s.item).unwrap_or(usize::MAX);
            *out_indices.add(k) = idx;
            *out_scores.add(k) = s.score;
        }
        write_out(out_len, ranked.len(), "out_len")
    })
}

/// Default hyperparameters.
#[no_mangle]
pub extern "C" fn ccf_train_options_default() -> CcfTrainOptions {
    let d = TrainConfig::default();
    CcfTrainOptions {
        loss: CcfLoss::Softmax,
        dim: d.dim,
        epochs: d.epochs,
        shards: d.shards,
        lr: d.lr0,
        anneal: d.anneal,
        reg_user: d.reg_user,
        reg_item: d.reg_item,
        tradeoff_c: 1.0,
        seed: d.seed,
        hash_bits: 0,
    }
}

/// Trains on a session file and writes the new model to `*out`.
///
/// # Safety
/// `path` must be NUL-terminated; `options` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ccf_train_sessions(
    path: *const c_char,
    options: *const CcfTrainOptions,
    out: *mut *mut CcfModel,
) -> CcfStatus {
    guard(|| {
        let path = text(path, "path")?;
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let loss = match o.loss {
            CcfLoss::Softmax => LossKind::Softmax,
            CcfLoss::Hinge => LossKind::hinge(),
            CcfLoss::SoftmaxExt => LossKind::SoftmaxExt,
            CcfLoss::HingeExt => LossKind::hinge_ext(o.tradeoff_c),
        };
        let cfg = TrainConfig {
            loss,
            dim: o.dim,
            reg_user: o.reg_user,
            reg_item: o.reg_item,
            lr0: o.lr,
            anneal: o.anneal,
            epochs: o.epochs,
            shards: o.shards,
            seed: o.seed,
            hash_bits: (o.hash_bits > 0).then_some(o.hash_bits),
            ..TrainConfig::default()
        };
        let data = parse_sessions(Path::new(path))?;
        let (store, _) = fit(&data.to_training_set(), &cfg)?;
        write_out(out, Box::into_raw(Box::new(CcfModel { store })), "out")
    })
}

/// Logit probability that the offer at `chosen` is picked given the
/// utilities of all `len` offers.
///
/// # Safety
/// `utilities` must point to `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ccf_softmax_prob(
    utilities: *const f64,
    len: usize,
    chosen: usize,
    out: *mut f64,
) -> CcfStatus {
    guard(|| {
        if utilities.is_null() {
            return Err(null("utilities"));
        }
        if chosen >= len {
            return Err(Failure(
                CcfStatus::InvalidData,
                format!("chosen index {chosen} out of range for {len} offers"),
            ));
        }
        let r = std::slice::from_raw_parts(utilities, len);
        write_out(out, softmax_prob(r, chosen), "out")
    })
}
