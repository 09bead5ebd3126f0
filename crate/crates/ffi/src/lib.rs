//! C interface to the toolkit: opaque handles, integer status codes, and a
//! thread-local last-error message.
//!
//! Handle types ([`PsConfig`], [`PsModel`], [`PsIndex`]) are opaque on the C
//! side; every constructor has a matching `_free`, and passing a handle to
//! any function after freeing it is undefined behavior, as usual. Functions
//! that can fail either return a [`PsStatus`] or a null pointer; in both
//! cases `ps_last_error()` holds a message for the calling thread until the
//! next call from that thread.
//!
//! All pointers must be non-null unless a parameter is documented nullable.
//! Panics never unwind across the boundary: they are caught and reported as
//! [`PsStatus::Internal`].
//!
//! The C header is generated by cbindgen into `include/pacesort.h` at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis};

use pacesort::config::{apply_override, Config};
use pacesort::data::augment::{prepare_clip, Phase};
use pacesort::data::FrameVolume;
use pacesort::retrieval::FeatureIndex;
use pacesort::train::{checkpoint, stream_rng, Model, STREAM_EVAL};
use pacesort::Error;

/// Status code returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArg = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// Invalid or inconsistent configuration value.
    Config = 3,
    /// Dataset problem: undecodable video, empty split, empty gallery,
    /// zero-norm feature.
    Data = 4,
    /// Tensor or buffer shape disagreement (includes undersized output
    /// buffers).
    Shape = 5,
    /// Checkpoint does not match the model being restored.
    Checkpoint = 6,
    /// Corrupt or foreign binary file.
    BadFormat = 7,
    /// Filesystem or serialization failure.
    Io = 8,
    /// Internal panic; a bug in this library, not the caller's fault.
    Internal = 9,
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        // Config text only ever enters this library as TOML, so a TOML
        // parse error is a configuration error from the caller's side.
        Error::Config(_)
        | Error::TomlParse(_)
        | Error::UnsupportedTupleSize(_)
        | Error::InvalidClipSpec(_)
        | Error::InvalidPermutation(_)
        | Error::LabelOutOfRange { .. }
        | Error::Indivisible { .. } => PsStatus::Config,
        Error::Decode { .. }
        | Error::EmptyVideo { .. }
        | Error::EmptySplit { .. }
        | Error::MissingSplit { .. }
        | Error::EmptyIndex
        | Error::ZeroVector(_) => PsStatus::Data,
        Error::ShapeMismatch(_) => PsStatus::Shape,
        Error::CheckpointMismatch(_) => PsStatus::Checkpoint,
        Error::BadFormat { .. } => PsStatus::BadFormat,
        Error::Io(_) | Error::Json(_) | Error::TomlEmit(_) | Error::Csv(_) => PsStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = CString::new(msg.replace('\0', " ")).expect("nul bytes stripped");
    LAST_ERROR.with(|e| *e.borrow_mut() = sanitized);
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
}

fn fail(e: &Error) -> PsStatus {
    set_error(&e.to_string());
    status_of(e)
}

/// Run `f` with panics converted into `Internal` + a last-error message.
fn guarded<T>(on_panic: T, f: impl FnOnce() -> T) -> T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            on_panic
        }
    }
}

/// # Safety
/// `ptr` must be non-null and point to a NUL-terminated UTF-8 string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, PsStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(PsStatus::NullArg);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not UTF-8");
        PsStatus::Utf8
    })
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, PsStatus> {
    utf8_arg(ptr).map(Path::new)
}

// ---------------------------------------------------------------------------
// Library-level calls
// ---------------------------------------------------------------------------

/// Version of the underlying crate; static string, never freed.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message describing the calling thread's most recent failure. Empty
/// string when the last call succeeded. Valid until this thread's next
/// call into the library.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Free a string returned by this library (`ps_config_to_toml`,
/// `ps_index_source_id`). Null is a no-op.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// PsConfig
// ---------------------------------------------------------------------------

/// Opaque configuration handle.
pub struct PsConfig(Config);

/// The built-in default configuration. Never fails.
#[no_mangle]
pub extern "C" fn ps_config_default() -> *mut PsConfig {
    clear_error();
    Box::into_raw(Box::new(PsConfig(Config::default())))
}

/// Parse and validate a TOML config. Null on failure (see `ps_last_error`).
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn ps_config_from_toml(text: *const c_char) -> *mut PsConfig {
    guarded(std::ptr::null_mut(), || {
        clear_error();
        let Ok(text) = utf8_arg(text) else {
            return std::ptr::null_mut();
        };
        let parsed = text
            .parse::<toml::Table>()
            .map_err(Error::from)
            .and_then(|t| Ok(toml::Value::Table(t).try_into::<Config>()?))
            .and_then(|cfg: Config| cfg.validate().map(|_| cfg));
        match parsed {
            Ok(cfg) => Box::into_raw(Box::new(PsConfig(cfg))),
            Err(e) => {
                fail(&e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Apply one `key=value` override (same grammar as the CLI `--override`).
///
/// The key and value type are checked immediately; cross-field consistency
/// is not, so coupled keys can be changed one call at a time. Call
/// `ps_config_validate` when done, or rely on the workflow entry points,
/// which validate before running.
///
/// # Safety
/// `cfg` must be a live handle; `key_value` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn ps_config_set(cfg: *mut PsConfig, key_value: *const c_char) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(cfg) = cfg.as_mut() else {
            set_error("null config handle");
            return PsStatus::NullArg;
        };
        let spec = match utf8_arg(key_value) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mut tree = match toml::Value::try_from(&cfg.0) {
            Ok(t) => t,
            Err(e) => return fail(&Error::from(e)),
        };
        let updated =
            apply_override(&mut tree, spec).and_then(|_| Ok(tree.try_into::<Config>()?));
        match updated {
            Ok(c) => {
                cfg.0 = c;
                PsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Check the whole config for range and cross-field consistency.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_config_validate(cfg: *const PsConfig) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(cfg) = cfg.as_ref() else {
            set_error("null config handle");
            return PsStatus::NullArg;
        };
        match cfg.0.validate() {
            Ok(()) => PsStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Render the config as TOML. Free the result with `ps_string_free`.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_config_to_toml(cfg: *const PsConfig) -> *mut c_char {
    guarded(std::ptr::null_mut(), || {
        clear_error();
        let Some(cfg) = cfg.as_ref() else {
            set_error("null config handle");
            return std::ptr::null_mut();
        };
        match toml::to_string_pretty(&cfg.0) {
            Ok(text) => CString::new(text).expect("toml has no nul bytes").into_raw(),
            Err(e) => {
                fail(&Error::from(e));
                std::ptr::null_mut()
            }
        }
    })
}

/// # Safety
/// `cfg` must come from this library and not be freed twice. Null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn ps_config_free(cfg: *mut PsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---------------------------------------------------------------------------
// Workflow calls
// ---------------------------------------------------------------------------

/// Generate the synthetic dataset under the config's `dataset.root`.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_synth(cfg: *const PsConfig) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(cfg) = cfg.as_ref() else {
            set_error("null config handle");
            return PsStatus::NullArg;
        };
        match pacesort::data::synthetic::generate(&cfg.0.synth, &cfg.0.dataset.root) {
            Ok(_) => PsStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Run self-supervised pretraining, writing checkpoint and metrics under
/// `out_dir`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn ps_pretrain(cfg: *const PsConfig, out_dir: *const c_char) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(cfg) = cfg.as_ref() else {
            set_error("null config handle");
            return PsStatus::NullArg;
        };
        let out = match path_arg(out_dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match pacesort::train::pretrain(&cfg.0, out) {
            Ok(_) => PsStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Run supervised fine-tuning. `init_checkpoint` may be null to train from
/// scratch.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` (and `init_checkpoint` when
/// non-null) NUL-terminated UTF-8 paths.
#[no_mangle]
pub unsafe extern "C" fn ps_finetune(
    cfg: *const PsConfig,
    out_dir: *const c_char,
    init_checkpoint: *const c_char,
) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(cfg) = cfg.as_ref() else {
            set_error("null config handle");
            return PsStatus::NullArg;
        };
        let out = match path_arg(out_dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let init: Option<PathBuf> = if init_checkpoint.is_null() {
            None
        } else {
            match path_arg(init_checkpoint) {
                Ok(p) => Some(p.to_path_buf()),
                Err(status) => return status,
            }
        };
        match pacesort::train::finetune(&cfg.0, out, init.as_deref()) {
            Ok(_) => PsStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// PsModel
// ---------------------------------------------------------------------------

/// Opaque handle to a restored checkpoint: model weights plus the config
/// it was trained with.
pub struct PsModel {
    model: Model,
    cfg: Config,
    epoch: usize,
}

/// Restore a checkpoint. Null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn ps_model_open(path: *const c_char) -> *mut PsModel {
    guarded(std::ptr::null_mut(), || {
        clear_error();
        let Ok(path) = path_arg(path) else {
            return std::ptr::null_mut();
        };
        match checkpoint::load(path) {
            Ok((model, meta)) => Box::into_raw(Box::new(PsModel {
                model,
                cfg: meta.config,
                epoch: meta.epoch,
            })),
            Err(e) => {
                fail(&e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Number of training epochs the checkpoint had completed.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_epoch(model: *const PsModel) -> u64 {
    model.as_ref().map(|m| m.epoch as u64).unwrap_or(0)
}

/// Frames per clip the model expects (`m`).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_frames_per_clip(model: *const PsModel) -> usize {
    model.as_ref().map(|m| m.cfg.backbone.m).unwrap_or(0)
}

/// Length of the retrieval feature vector this model produces, or 0 on
/// failure.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_retrieval_dim(model: *mut PsModel) -> usize {
    guarded(0, || {
        clear_error();
        let Some(m) = model.as_mut() else {
            set_error("null model handle");
            return 0;
        };
        let s = m.cfg.backbone.input_size;
        let zero = ndarray::Array5::<f32>::zeros((1, 3, m.cfg.backbone.m, s, s));
        match m.model.backbone.retrieval_features(&zero) {
            Ok(f) => f.ncols(),
            Err(e) => {
                fail(&e);
                0
            }
        }
    })
}

/// Embed one clip for retrieval.
///
/// `frames` is `m` RGB frames in row-major `(m, height, width, 3)` u8
/// layout, chronological order, already at the playback speed of interest.
/// They are resized, center-cropped, and normalized exactly as during
/// evaluation. The feature vector (length `ps_model_retrieval_dim`) is
/// written to `out`; `*out_len` receives its length. Fails with `Shape` if
/// `out_cap` is too small or `m` disagrees with the model.
///
/// # Safety
/// `model` must be a live handle; `frames` must hold `m*height*width*3`
/// bytes; `out` must have room for `out_cap` floats; `out_len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_retrieval_features(
    model: *mut PsModel,
    frames: *const u8,
    m: usize,
    height: usize,
    width: usize,
    out: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(handle) = model.as_mut() else {
            set_error("null model handle");
            return PsStatus::NullArg;
        };
        if frames.is_null() || out.is_null() || out_len.is_null() {
            set_error("null buffer argument");
            return PsStatus::NullArg;
        }
        if m == 0 || height == 0 || width == 0 {
            set_error("clip dimensions must be positive");
            return PsStatus::Shape;
        }
        let pixels = std::slice::from_raw_parts(frames, m * height * width * 3);
        let data = match Array4::from_shape_vec((m, height, width, 3), pixels.to_vec()) {
            Ok(d) => d,
            Err(e) => {
                set_error(&e.to_string());
                return PsStatus::Shape;
            }
        };
        let volume = match FrameVolume::new(data, "ffi".into(), 25.0) {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let indices: Vec<usize> = (0..m).collect();
        // Eval-phase preparation draws nothing from the rng.
        let mut rng = stream_rng(0, STREAM_EVAL);
        let clip = match prepare_clip::<f32, _>(
            &volume,
            &indices,
            &handle.cfg.augment,
            Phase::Eval,
            &mut rng,
        ) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let batch = clip.insert_axis(Axis(0));
        let features = match handle.model.backbone.retrieval_features(&batch) {
            Ok(f) => f,
            Err(e) => return fail(&e),
        };
        let row = features.row(0);
        if out_cap < row.len() {
            set_error(&format!(
                "output buffer holds {out_cap} floats, feature needs {}",
                row.len()
            ));
            return PsStatus::Shape;
        }
        let out = std::slice::from_raw_parts_mut(out, row.len());
        for (dst, &src) in out.iter_mut().zip(row.iter()) {
            *dst = src;
        }
        *out_len = row.len();
        PsStatus::Ok
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice. Null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// PsIndex
// ---------------------------------------------------------------------------

/// Opaque handle to a retrieval gallery.
pub struct PsIndex(FeatureIndex);

/// Load a gallery directory written by the `retrieve` subcommand (or
/// `FeatureIndex::save`). Null on failure.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn ps_index_open(dir: *const c_char) -> *mut PsIndex {
    guarded(std::ptr::null_mut(), || {
        clear_error();
        let Ok(dir) = path_arg(dir) else {
            return std::ptr::null_mut();
        };
        match FeatureIndex::load(dir) {
            Ok(idx) => Box::into_raw(Box::new(PsIndex(idx))),
            Err(e) => {
                fail(&e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Number of gallery rows.
///
/// # Safety
/// `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_index_len(index: *const PsIndex) -> usize {
    index.as_ref().map(|i| i.0.len()).unwrap_or(0)
}

/// Feature dimensionality of the gallery.
///
/// # Safety
/// `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_index_dim(index: *const PsIndex) -> usize {
    index.as_ref().map(|i| i.0.dim()).unwrap_or(0)
}

/// Class label of one gallery row, or -1 when `row` is out of range.
///
/// # Safety
/// `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_index_label(index: *const PsIndex, row: usize) -> i64 {
    index
        .as_ref()
        .and_then(|i| i.0.labels().get(row))
        .map(|&l| l as i64)
        .unwrap_or(-1)
}

/// Source id of one gallery row (free with `ps_string_free`), or null when
/// `row` is out of range.
///
/// # Safety
/// `index` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_index_source_id(index: *const PsIndex, row: usize) -> *mut c_char {
    guarded(std::ptr::null_mut(), || {
        clear_error();
        match index.as_ref().and_then(|i| i.0.source_ids().get(row)) {
            Some(id) => CString::new(id.as_str())
                .map(CString::into_raw)
                .unwrap_or(std::ptr::null_mut()),
            None => {
                set_error("gallery row out of range");
                std::ptr::null_mut()
            }
        }
    })
}

/// Rank the gallery against a query vector (any scale; normalized
/// internally) and keep the `k` nearest rows.
///
/// Row indices go to `out_rows` and cosine distances to `out_distances`;
/// `*out_len` receives the count actually written, which is
/// `min(k, gallery size)`. Both buffers need room for `k` entries.
///
/// # Safety
/// `index` must be a live handle; `query` must hold `dim` floats;
/// `out_rows`/`out_distances` must have room for `k` entries; `out_len`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_index_query(
    index: *const PsIndex,
    query: *const f32,
    dim: usize,
    k: usize,
    out_rows: *mut u64,
    out_distances: *mut f32,
    out_len: *mut usize,
) -> PsStatus {
    guarded(PsStatus::Internal, || {
        clear_error();
        let Some(idx) = index.as_ref() else {
            set_error("null index handle");
            return PsStatus::NullArg;
        };
        if query.is_null() || out_rows.is_null() || out_distances.is_null() || out_len.is_null() {
            set_error("null buffer argument");
            return PsStatus::NullArg;
        }
        let q = std::slice::from_raw_parts(query, dim);
        let q = ndarray::ArrayView1::from(q);
        match idx.0.query_topk(q, k) {
            Ok(hits) => {
                let rows = std::slice::from_raw_parts_mut(out_rows, hits.len());
                let dists = std::slice::from_raw_parts_mut(out_distances, hits.len());
                for (i, hit) in hits.iter().enumerate() {
                    rows[i] = hit.row as u64;
                    dists[i] = hit.distance;
                }
                *out_len = hits.len();
                PsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `index` must come from this library and not be freed twice. Null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn ps_index_free(index: *mut PsIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}
