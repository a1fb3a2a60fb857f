//! C interface to the label codec, the metrics and checkpoint inference.
//!
//! Every fallible function returns a [`UnimseStatus`]; on failure the
//! message is available from [`unimse_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use unimse::datapipe::{formalize_record, FeatureSequence, Record, RecordMeta, Split};
use unimse::evalmetrics::{erc_metrics, msa_metrics};
use unimse::model::{load_checkpoint, Checkpoint, ModelInput};
use unimse::textcodec::{
    decode_prediction, serialize_ul, Emotion, Intensity, Polarity, Provenance, Task, TaskValue,
    UniversalLabel, Vocabulary,
};
use unimse::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnimseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Checkpoint = 5,
    Label = 6,
    Metrics = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// Task selector: 0 = MSA, 1 = ERC.
pub const UNIMSE_TASK_MSA: i32 = 0;
pub const UNIMSE_TASK_ERC: i32 = 1;

/// Number of tokens in a serialized label, EOS included.
pub const UNIMSE_LABEL_TOKENS: usize = 4;

/// A token vocabulary.
pub struct UnimseVocab(Vocabulary);

/// A trained model together with its vocabulary.
pub struct UnimseModel {
    ckpt: Checkpoint,
    vocab: UnimseVocab,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnimseMsaMetrics {
    pub mae: f64,
    /// NaN when either side has zero variance.
    pub corr: f64,
    pub acc7: f64,
    /// Binary scores are NaN when no sample qualifies.
    pub acc2_nonneg: f64,
    pub acc2_posneg: f64,
    pub f1_nonneg: f64,
    pub f1_posneg: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnimseErcMetrics {
    pub acc: f64,
    pub wf1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(UnimseStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => UnimseStatus::Io,
            Error::Checkpoint(_) => UnimseStatus::Checkpoint,
            Error::Label(_) | Error::Vocab(_) => UnimseStatus::Label,
            Error::Metrics(_) => UnimseStatus::Metrics,
            _ => UnimseStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(UnimseStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UnimseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UnimseStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UnimseStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(UnimseStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(UnimseStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts(p, n))
}

fn task_of(task: i32) -> Result<Task, Fail> {
    match task {
        UNIMSE_TASK_MSA => Ok(Task::Msa),
        UNIMSE_TASK_ERC => Ok(Task::Erc),
        t => Err(invalid(format!("task {t}: expected 0 (MSA) or 1 (ERC)"))),
    }
}

fn emotion_of(i: i32) -> Result<Emotion, Fail> {
    usize::try_from(i)
        .ok()
        .and_then(|i| Emotion::ALL.get(i).copied())
        .ok_or_else(|| {
            invalid(format!(
                "emotion index {i} out of range 0..{}",
                Emotion::ALL.len()
            ))
        })
}

/// Message of the last failure on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn unimse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Number of emotion categories; indices follow `unimse_emotion_name`.
#[no_mangle]
pub extern "C" fn unimse_emotion_count() -> usize {
    Emotion::ALL.len()
}

/// Static name of emotion `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn unimse_emotion_name(index: i32) -> *const c_char {
    const NAMES: [&CStr; 10] = [
        c"neutral",
        c"joy",
        c"excited",
        c"surprise",
        c"sadness",
        c"anger",
        c"angry",
        c"fear",
        c"disgust",
        c"frustrated",
    ];
    usize::try_from(index)
        .ok()
        .and_then(|i| NAMES.get(i))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Serializes a complete label into `out[0..4]`.
///
/// `polarity`: 0 positive, 1 negative, 2 neutral. `intensity_tenths` lies in
/// [-30, 30]. `emotion` is an emotion index.
///
/// # Safety
/// `out` must point to at least four writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn unimse_serialize_label(
    polarity: i32,
    intensity_tenths: i32,
    emotion: i32,
    out: *mut u32,
) -> UnimseStatus {
    guard(|| {
        non_null(out, "out")?;
        let polarity = usize::try_from(polarity)
            .ok()
            .and_then(|p| Polarity::ALL.get(p).copied())
            .ok_or_else(|| invalid(format!("polarity {polarity} out of range 0..3")))?;
        let tenths = i8::try_from(intensity_tenths)
            .map_err(|_| invalid(format!("intensity {intensity_tenths}")))?;
        let label = UniversalLabel {
            polarity,
            intensity: Some(Intensity::from_tenths(tenths)?),
            emotion: Some(emotion_of(emotion)?),
            intensity_source: Provenance::Original,
            emotion_source: Provenance::Original,
        };
        let seq = serialize_ul(&label)?;
        slice::from_raw_parts_mut(out, UNIMSE_LABEL_TOKENS).copy_from_slice(&seq);
        Ok(())
    })
}

/// Loads a vocabulary text file (one token per line).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn unimse_vocab_load(
    path: *const c_char,
    out: *mut *mut UnimseVocab,
) -> UnimseStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = Vocabulary::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(UnimseVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from `unimse_vocab_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn unimse_vocab_free(vocab: *mut UnimseVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// # Safety
/// `vocab` must be a live handle or null (which gives 0).
#[no_mangle]
pub unsafe extern "C" fn unimse_vocab_len(vocab: *const UnimseVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// Reads the task value from a generated token sequence. For MSA the
/// intensity goes to `out_intensity`; for ERC the emotion index goes to
/// `out_emotion`. Malformed sequences decode to 0.0 / neutral with
/// `out_well_formed` set to 0.
///
/// # Safety
/// `tokens` must hold `n` values; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn unimse_decode_prediction(
    vocab: *const UnimseVocab,
    tokens: *const u32,
    n: usize,
    task: i32,
    out_intensity: *mut f64,
    out_emotion: *mut i32,
    out_well_formed: *mut i32,
) -> UnimseStatus {
    guard(|| {
        non_null(vocab, "vocab")?;
        non_null(out_intensity, "out_intensity")?;
        non_null(out_emotion, "out_emotion")?;
        non_null(out_well_formed, "out_well_formed")?;
        let seq = slice_arg(tokens, n, "tokens")?;
        let p = decode_prediction(seq, task_of(task)?, &(*vocab).0, true)?;
        match p.value {
            TaskValue::Intensity(v) => *out_intensity = v,
            TaskValue::Emotion(e) => *out_emotion = e.index() as i32,
        }
        *out_well_formed = i32::from(p.well_formed);
        Ok(())
    })
}

/// MSA metrics of `n` predicted and gold intensities.
///
/// # Safety
/// `pred` and `gold` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unimse_msa_metrics(
    pred: *const f64,
    gold: *const f64,
    n: usize,
    out: *mut UnimseMsaMetrics,
) -> UnimseStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = msa_metrics(slice_arg(pred, n, "pred")?, slice_arg(gold, n, "gold")?)?;
        let get = |k: &str| r.get(k).unwrap_or(f64::NAN);
        *out = UnimseMsaMetrics {
            mae: get("mae"),
            corr: get("corr"),
            acc7: get("acc7"),
            acc2_nonneg: get("acc2_nonneg"),
            acc2_posneg: get("acc2_posneg"),
            f1_nonneg: get("f1_nonneg"),
            f1_posneg: get("f1_posneg"),
        };
        Ok(())
    })
}

/// Accuracy and weighted F1 of `n` emotion indices over the label set
/// `labels[0..n_labels]`.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unimse_erc_metrics(
    pred: *const i32,
    gold: *const i32,
    n: usize,
    labels: *const i32,
    n_labels: usize,
    out: *mut UnimseErcMetrics,
) -> UnimseStatus {
    guard(|| {
        non_null(out, "out")?;
        let map = |s: &[i32]| {
            s.iter()
                .map(|&i| emotion_of(i))
                .collect::<Result<Vec<_>, _>>()
        };
        let pred = map(slice_arg(pred, n, "pred")?)?;
        let gold = map(slice_arg(gold, n, "gold")?)?;
        let labels = map(slice_arg(labels, n_labels, "labels")?)?;
        let r = erc_metrics(&pred, &gold, &labels)?;
        *out = UnimseErcMetrics {
            acc: r.get("acc").unwrap_or(f64::NAN),
            wf1: r.get("wf1").unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Loads a checkpoint written by `unimse train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn unimse_model_load(
    path: *const c_char,
    out: *mut *mut UnimseModel,
) -> UnimseStatus {
    guard(|| {
        non_null(out, "out")?;
        let ckpt = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        let vocab = UnimseVocab(ckpt.vocab.clone());
        *out = Box::into_raw(Box::new(UnimseModel { ckpt, vocab }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `unimse_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn unimse_model_free(model: *mut UnimseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary of a loaded model, owned by the model handle.
///
/// # Safety
/// `model` must be a live handle; the result must not be freed.
#[no_mangle]
pub unsafe extern "C" fn unimse_model_vocab(model: *const UnimseModel) -> *const UnimseVocab {
    model
        .as_ref()
        .map_or(ptr::null(), |m| ptr::from_ref(&m.vocab))
}

/// Generates a label sequence for one utterance without dialogue context.
/// Features are row-major `frames x dim` matrices. Up to `cap` tokens are
/// written to `out_tokens` and the full length to `out_len`; a short buffer
/// gives `BufferTooSmall` with `out_len` still set.
///
/// # Safety
/// All arrays must hold the stated number of values and the out pointers
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn unimse_model_generate(
    model: *const UnimseModel,
    text: *const c_char,
    task: i32,
    acoustic: *const f64,
    acoustic_frames: usize,
    acoustic_dim: usize,
    visual: *const f64,
    visual_frames: usize,
    visual_dim: usize,
    out_tokens: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> UnimseStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out_len, "out_len")?;
        let ckpt = &(*model).ckpt;
        let features =
            |p: *const f64, l: usize, d: usize, what: &str| -> Result<FeatureSequence, Fail> {
                let n = l
                    .checked_mul(d)
                    .ok_or_else(|| invalid(format!("{what} size overflows")))?;
                Ok(FeatureSequence::new(l, d, slice_arg(p, n, what)?.to_vec())?)
            };
        let record = Record {
            meta: RecordMeta {
                id: "ffi".into(),
                dataset: "ffi".into(),
                split: Split::Test,
                task: Some(task_of(task)?),
                text: str_arg(text, "text")?.to_string(),
                prev: Vec::new(),
                next: Vec::new(),
                acoustic: String::new(),
                visual: String::new(),
                intensity: None,
                emotion: None,
                intensity_source: None,
                emotion_source: None,
            },
            acoustic: features(acoustic, acoustic_frames, acoustic_dim, "acoustic")?,
            visual: features(visual, visual_frames, visual_dim, "visual")?,
        };
        let x = formalize_record(&record, &ckpt.vocab)?;
        let seq = ckpt.model.generate(&ModelInput::from(&x))?;
        *out_len = seq.len();
        if seq.len() > cap {
            return Err(Fail(
                UnimseStatus::BufferTooSmall,
                format!("need {} tokens, have {cap}", seq.len()),
            ));
        }
        if !seq.is_empty() {
            non_null(out_tokens, "out_tokens")?;
            slice::from_raw_parts_mut(out_tokens, seq.len()).copy_from_slice(&seq);
        }
        Ok(())
    })
}
