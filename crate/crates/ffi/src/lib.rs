//! C ABI over placekd models and descriptor databases.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`PkdStatus`].
//! On failure a message for the calling thread is available from
//! [`pkd_last_error`] until the next failing call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use placekd::data::{load_dataset, Split};
use placekd::layers::Module;
use placekd::models::{Checkpoint, Model};
use placekd::retrieval::{build_db, DbMeta, DescriptorDatabase};
use placekd::tensor::Tensor;
use placekd::Error;

/// Result of an FFI call. Library failures keep the numeric code of the
/// underlying error kind.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Panic = 3,
    Config = 10,
    MissingParam = 11,
    Shape = 20,
    InvalidTensor = 21,
    Degenerate = 22,
    NonFinite = 23,
    Backward = 24,
    FrozenTeacher = 25,
    Diverged = 26,
    EmptyMining = 30,
    Format = 31,
    Integrity = 32,
    Io = 33,
    Json = 34,
    DatasetVersion = 41,
    CheckpointVersion = 42,
    DatabaseVersion = 43,
}

impl From<&Error> for PkdStatus {
    fn from(e: &Error) -> Self {
        match e.code() {
            10 => PkdStatus::Config,
            11 => PkdStatus::MissingParam,
            20 => PkdStatus::Shape,
            21 => PkdStatus::InvalidTensor,
            22 => PkdStatus::Degenerate,
            23 => PkdStatus::NonFinite,
            24 => PkdStatus::Backward,
            25 => PkdStatus::FrozenTeacher,
            26 => PkdStatus::Diverged,
            30 => PkdStatus::EmptyMining,
            31 => PkdStatus::Format,
            32 => PkdStatus::Integrity,
            33 => PkdStatus::Io,
            34 => PkdStatus::Json,
            41 => PkdStatus::DatasetVersion,
            42 => PkdStatus::CheckpointVersion,
            43 => PkdStatus::DatabaseVersion,
            _ => PkdStatus::InvalidArgument,
        }
    }
}

/// A loaded checkpoint ready for inference.
pub struct PkdModel {
    ckpt: Checkpoint,
    model: Model,
}

/// An immutable descriptor database.
pub struct PkdDatabase {
    db: DescriptorDatabase,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

struct Fail(PkdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(PkdStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PkdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PkdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PkdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PkdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(PkdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pkd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pkd_model_load(path: *const c_char, out: *mut *mut PkdModel) -> PkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint::load(&path)?;
        let model = ckpt.model()?;
        *out = Box::into_raw(Box::new(PkdModel { ckpt, model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pkd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pkd_model_free(model: *mut PkdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Descriptor width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pkd_model_descriptor_width(model: *const PkdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.descriptor_width())
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pkd_model_param_count(model: *const PkdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.count_params())
}

/// Writes the expected image shape (channels, height, width) to `shape[0..3]`.
///
/// # Safety
/// `model` must be a live handle and `shape` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn pkd_model_image_shape(model: *const PkdModel, shape: *mut usize) -> PkdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let s = m.ckpt.config.image_shape();
        std::slice::from_raw_parts_mut(shape, 3).copy_from_slice(&s);
        Ok(())
    })
}

/// Describes one C×H×W row-major image of `image_len` values into `out`,
/// which must hold `out_len ≥ width` values.
///
/// # Safety
/// `image` must point to `image_len` readable floats and `out` to `out_len`
/// writable floats.
#[no_mangle]
pub unsafe extern "C" fn pkd_model_describe(
    model: *const PkdModel,
    image: *const f32,
    image_len: usize,
    out: *mut f32,
    out_len: usize,
) -> PkdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if image.is_null() || out.is_null() {
            return Err(null("image or out"));
        }
        let shape = m.ckpt.config.image_shape();
        let want: usize = shape.iter().product();
        if image_len != want {
            return Err(Fail(
                PkdStatus::Shape,
                format!("image has {image_len} values, model expects {want}"),
            ));
        }
        let width = m.model.descriptor_width();
        if out_len < width {
            return Err(Fail(
                PkdStatus::InvalidArgument,
                format!("output holds {out_len} values, descriptor has {width}"),
            ));
        }
        let data = std::slice::from_raw_parts(image, image_len).iter().map(|&v| f64::from(v)).collect();
        let d = m.model.describe(&m.ckpt.params, &Tensor::new(shape.to_vec(), data)?)?;
        let out = std::slice::from_raw_parts_mut(out, width);
        for (o, v) in out.iter_mut().zip(d.values()) {
            *o = *v as f32;
        }
        Ok(())
    })
}

/// Loads a database file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_load(path: *const c_char, out: *mut *mut PkdDatabase) -> PkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let db = DescriptorDatabase::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PkdDatabase { db }));
        Ok(())
    })
}

/// Describes the database split of the dataset directory `dataset_dir`.
///
/// # Safety
/// `model` must be a live handle, `dataset_dir` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_build(
    model: *const PkdModel,
    dataset_dir: *const c_char,
    out: *mut *mut PkdDatabase,
) -> PkdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = path_arg(dataset_dir, "dataset_dir")?;
        let ds = load_dataset(&dir)?;
        let meta = DbMeta {
            checkpoint_hash: m.ckpt.hash(),
            checkpoint_path: None,
            model_kind: Some(m.ckpt.config.kind().to_string()),
            dataset: Some(dir.display().to_string()),
        };
        let db = build_db(&ds, Split::Database, &m.model, &m.ckpt.params, meta)?;
        *out = Box::into_raw(Box::new(PkdDatabase { db }));
        Ok(())
    })
}

/// # Safety
/// `db` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_save(db: *const PkdDatabase, path: *const c_char) -> PkdStatus {
    guard(|| {
        let d = db.as_ref().ok_or_else(|| null("db"))?;
        d.db.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `db` must come from a `pkd_database_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_free(db: *mut PkdDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_len(db: *const PkdDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.db.len())
}

/// Descriptor width, or 0 for a null handle.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_width(db: *const PkdDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.db.width())
}

/// Exact top-`n` search. Writes ids and Euclidean distances in ascending
/// order, ties broken by lower id. Safe to call concurrently on one handle.
///
/// # Safety
/// `query` must point to `query_len` readable floats; `ids` and `distances`
/// to `n` writable values each.
#[no_mangle]
pub unsafe extern "C" fn pkd_database_search(
    db: *const PkdDatabase,
    query: *const f32,
    query_len: usize,
    n: usize,
    ids: *mut u64,
    distances: *mut f32,
) -> PkdStatus {
    guard(|| {
        let d = db.as_ref().ok_or_else(|| null("db"))?;
        if query.is_null() || ids.is_null() || distances.is_null() {
            return Err(null("query, ids or distances"));
        }
        let hits = d.db.search(std::slice::from_raw_parts(query, query_len), n)?;
        let ids = std::slice::from_raw_parts_mut(ids, n);
        let distances = std::slice::from_raw_parts_mut(distances, n);
        for (i, h) in hits.iter().enumerate() {
            ids[i] = h.id;
            distances[i] = h.distance;
        }
        Ok(())
    })
}
