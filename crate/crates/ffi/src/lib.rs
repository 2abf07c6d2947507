//! C ABI over the knm engine.
//!
//! Objects are opaque handles created by `knm_*_load`/`knm_*_connect` and
//! released with the matching `knm_*_free`. Every fallible call returns a
//! [`KnmStatus`]; on failure, [`knm_last_error`] describes the problem for the
//! calling thread. Output arrays are caller-allocated: when `capacity` is too
//! small the call fails with `KNM_STATUS_BUFFER_TOO_SMALL` and `*out_len` holds
//! the required length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use knm_core::combiner::{compute_lambda, ExcludedPolicy, Observation, ObservationWindow};
use knm_core::{
    CombinerConfig, Datastore, Engine, Error, LanguageModel, Mode, NgramLm, RemoteConfig, RemoteLm, RetrievalIndex,
    TokenId, Vocabulary,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Backend = 4,
    Data = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnmMode {
    KnmBayesian = 0,
    KnmFixedLambda = 1,
    KnmPriorOnly = 2,
    KnnLmBaseline = 3,
    LmOnly = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnmObservation {
    LmCorrect = 0,
    LmMistake = 1,
    Excluded = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnmExcludedPolicy {
    Skip = 0,
    CountAsCorrect = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnmCombinerConfig {
    pub mode: KnmMode,
    pub k: usize,
    pub window: usize,
    pub fixed_lambda: f64,
    pub excluded: KnmExcludedPolicy,
}

/// Vocabulary handle.
pub struct KnmVocab(Vocabulary);

/// Language model handle.
pub struct KnmModel(Box<dyn LanguageModel>);

/// Datastore plus its search index.
pub struct KnmIndex(RetrievalIndex);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> KnmStatus {
    match err {
        Error::Stage { source, .. } => status_of(source),
        Error::Io(_) => KnmStatus::Io,
        Error::Config(_) => KnmStatus::Config,
        Error::InvalidArgument(_) => KnmStatus::InvalidArgument,
        Error::BackendUnavailable(_) | Error::Protocol(_) => KnmStatus::Backend,
        _ => KnmStatus::Data,
    }
}

enum Fail {
    Null(&'static str),
    Short(usize),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> KnmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KnmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            KnmStatus::NullPointer
        }
        Ok(Err(Fail::Short(needed))) => {
            set_error(format!("output buffer too small: {needed} elements needed"));
            KnmStatus::BufferTooSmall
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            KnmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn tokens(ids: *const u32, len: usize) -> Result<Vec<TokenId>, Fail> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if ids.is_null() {
        return Err(Fail::Null("token ids"));
    }
    Ok(std::slice::from_raw_parts(ids, len)
        .iter()
        .map(|&i| TokenId(i))
        .collect())
}

/// Copies `src` into the caller's buffer, reporting the length either way.
unsafe fn emit<T: Copy>(src: &[T], out: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Fail> {
    if !out_len.is_null() {
        *out_len = src.len();
    }
    if src.len() > capacity {
        return Err(Fail::Short(src.len()));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(Fail::Null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn knm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn knm_vocab_load(path: *const c_char, out: *mut *mut KnmVocab) -> KnmStatus {
    guard(|| {
        let path = string(path, "path")?;
        store(out, KnmVocab(Vocabulary::load(Path::new(path))?))
    })
}

/// # Safety
/// `vocab` must come from [`knm_vocab_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn knm_vocab_free(vocab: *mut KnmVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// # Safety
/// `vocab` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn knm_vocab_len(vocab: *const KnmVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// Lexes `text` and writes its token ids to `out_ids`.
///
/// # Safety
/// `text` must be NUL-terminated; `out_ids` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn knm_tokenize(
    vocab: *const KnmVocab,
    text: *const c_char,
    out_ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> KnmStatus {
    guard(|| {
        let vocab = deref(vocab, "vocab")?;
        let ids: Vec<u32> = vocab.0.tokenize(string(text, "text")?).iter().map(|t| t.0).collect();
        emit(&ids, out_ids, capacity, out_len)
    })
}

/// Writes the detokenized text of `ids`, NUL-terminated, to `out`. The length
/// reported excludes the terminator, so `capacity` must be at least one more.
///
/// # Safety
/// `ids` must hold `len` elements; `out` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn knm_detokenize(
    vocab: *const KnmVocab,
    ids: *const u32,
    len: usize,
    out: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> KnmStatus {
    guard(|| {
        let vocab = deref(vocab, "vocab")?;
        let ids = tokens(ids, len)?;
        if let Some(bad) = ids.iter().find(|t| t.index() >= vocab.0.len()) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary")).into());
        }
        let mut bytes: Vec<c_char> = vocab.0.detokenize(&ids).bytes().map(|b| b as c_char).collect();
        if !out_len.is_null() {
            *out_len = bytes.len();
        }
        bytes.push(0);
        emit(&bytes, out, capacity, ptr::null_mut())
    })
}

/// Loads a saved reference n-gram model.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn knm_model_load(path: *const c_char, out: *mut *mut KnmModel) -> KnmStatus {
    guard(|| {
        let lm = NgramLm::load(Path::new(string(path, "path")?))?;
        store(out, KnmModel(Box::new(lm)))
    })
}

/// Connects to a remote model. No request is made until first use.
///
/// # Safety
/// `base_url` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn knm_model_connect(
    base_url: *const c_char,
    vocab_size: usize,
    dim: usize,
    out: *mut *mut KnmModel,
) -> KnmStatus {
    guard(|| {
        let config = RemoteConfig::new(string(base_url, "base_url")?, vocab_size, dim);
        store(out, KnmModel(Box::new(RemoteLm::new(config)?)))
    })
}

/// # Safety
/// `model` must come from a `knm_model_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn knm_model_free(model: *mut KnmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn knm_model_vocab_size(model: *const KnmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.vocab_size())
}

/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn knm_model_dim(model: *const KnmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.embedding_dim())
}

/// Next-token probabilities after `context`, one per vocabulary id.
///
/// # Safety
/// `context` must hold `len` ids; `out_probs` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn knm_predict(
    model: *const KnmModel,
    context: *const u32,
    len: usize,
    out_probs: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> KnmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let dist = model.0.predict(&tokens(context, len)?)?;
        emit(dist.probs(), out_probs, capacity, out_len)
    })
}

/// Context embedding of `context`.
///
/// # Safety
/// `context` must hold `len` ids; `out_vec` must hold `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn knm_embed(
    model: *const KnmModel,
    context: *const u32,
    len: usize,
    out_vec: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> KnmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let e = model.0.embed(&tokens(context, len)?)?;
        emit(e.as_slice(), out_vec, capacity, out_len)
    })
}

/// Loads a datastore file and indexes it for search.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn knm_index_load(path: *const c_char, out: *mut *mut KnmIndex) -> KnmStatus {
    guard(|| {
        let store_ = Datastore::load(Path::new(string(path, "path")?))?;
        store(out, KnmIndex(RetrievalIndex::new(store_)))
    })
}

/// # Safety
/// `index` must come from [`knm_index_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn knm_index_free(index: *mut KnmIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// # Safety
/// `index` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn knm_index_len(index: *const KnmIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.store().len())
}

/// Model error rate recorded when the datastore was built.
///
/// # Safety
/// `index` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn knm_index_error_rate(index: *const KnmIndex) -> f64 {
    index.as_ref().map_or(0.0, |i| i.0.store().error_rate())
}

#[no_mangle]
pub extern "C" fn knm_combiner_config_default() -> KnmCombinerConfig {
    KnmCombinerConfig {
        mode: KnmMode::KnmBayesian,
        k: 8,
        window: 8,
        fixed_lambda: 0.1,
        excluded: KnmExcludedPolicy::Skip,
    }
}

fn mode(m: KnmMode) -> Mode {
    match m {
        KnmMode::KnmBayesian => Mode::KnmBayesian,
        KnmMode::KnmFixedLambda => Mode::KnmFixedLambda,
        KnmMode::KnmPriorOnly => Mode::KnmPriorOnly,
        KnmMode::KnnLmBaseline => Mode::KnnLmBaseline,
        KnmMode::LmOnly => Mode::LmOnly,
    }
}

fn policy(p: KnmExcludedPolicy) -> ExcludedPolicy {
    match p {
        KnmExcludedPolicy::Skip => ExcludedPolicy::Skip,
        KnmExcludedPolicy::CountAsCorrect => ExcludedPolicy::CountAsCorrect,
    }
}

/// Predicts the token after `context`. `index` may be NULL for `LM_ONLY`.
///
/// # Safety
/// Handles must be live (or NULL where allowed); `context` must hold `len`
/// ids; `config`, `out_token` and `out_lambda` must be valid pointers
/// (`out_lambda` may be NULL).
#[no_mangle]
pub unsafe extern "C" fn knm_complete_token(
    model: *const KnmModel,
    index: *const KnmIndex,
    config: *const KnmCombinerConfig,
    context: *const u32,
    len: usize,
    out_token: *mut u32,
    out_lambda: *mut f64,
) -> KnmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let c = deref(config, "config")?;
        if out_token.is_null() {
            return Err(Fail::Null("out_token"));
        }
        let config = CombinerConfig {
            mode: mode(c.mode),
            k: c.k,
            window: c.window,
            fixed_lambda: c.fixed_lambda,
            excluded: policy(c.excluded),
        };
        let engine = Engine::new(model.0.as_ref(), index.as_ref().map(|i| &i.0), config)?;
        let completion = engine.complete_token(&tokens(context, len)?)?;
        *out_token = completion.token.0;
        if !out_lambda.is_null() {
            *out_lambda = completion.lambda;
        }
        Ok(())
    })
}

/// Interpolation weight for an observation history (oldest first) under a
/// window of `window` slots and the given model error rate.
///
/// # Safety
/// `history` must hold `len` elements and `out_lambda` must be valid.
#[no_mangle]
pub unsafe extern "C" fn knm_compute_lambda(
    history: *const KnmObservation,
    len: usize,
    window: usize,
    excluded: KnmExcludedPolicy,
    error_rate: f64,
    out_lambda: *mut f64,
) -> KnmStatus {
    guard(|| {
        if out_lambda.is_null() {
            return Err(Fail::Null("out_lambda"));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()).into());
        }
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(Error::InvalidArgument(format!("error rate {error_rate} outside [0, 1]")).into());
        }
        let history: Vec<Observation> = if len == 0 {
            Vec::new()
        } else if history.is_null() {
            return Err(Fail::Null("history"));
        } else {
            std::slice::from_raw_parts(history, len)
                .iter()
                .map(|o| match o {
                    KnmObservation::LmCorrect => Observation::LmCorrect,
                    KnmObservation::LmMistake => Observation::LmMistake,
                    KnmObservation::Excluded => Observation::Excluded,
                })
                .collect()
        };
        let w = ObservationWindow::from_history(&history, window, policy(excluded));
        *out_lambda = compute_lambda(&w, error_rate);
        Ok(())
    })
}
