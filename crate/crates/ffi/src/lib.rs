//! C ABI over `pgt-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`PgtStatus`]; on failure, [`pgt_last_error`] describes the cause for the
//! calling thread. Outputs are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pgt_core::env::{EnvVariant, TaskId};
use pgt_core::eval::evaluate;
use pgt_core::policy::{demo_trajectory, load_bundle, Adapter, GoalLatent, PolicyBundle};
use pgt_core::rng::{stream_seed, Namespace};
use pgt_core::tuning::{collect_dataset, load_latent, save_latent, tune, LatentMeta, TuneConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of range or not valid UTF-8.
    InvalidArgument = 2,
    /// Malformed input data or a violated precondition in the library.
    Data = 3,
    /// A file could not be read or written.
    Io = 4,
    /// The library panicked; the handles passed in are still valid.
    Internal = 5,
}

/// Task identifiers accepted wherever a `uint32_t task` is taken.
#[repr(u32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgtTask {
    Collect = 0,
    Craft = 1,
    Explore = 2,
    Hunt = 3,
    Place = 4,
}

/// Frozen policy bundle.
pub struct PgtBundle(PolicyBundle);

/// Goal latent vector.
pub struct PgtLatent(GoalLatent);

/// Knobs of one tuning round. Obtain defaults from [`pgt_tune_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgtTuneParams {
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub collect_n: usize,
    pub k_pos: usize,
    pub k_neg: usize,
    pub seed: u64,
    pub workers: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(PgtStatus, String);

impl From<pgt_core::Error> for Failure {
    fn from(e: pgt_core::Error) -> Self {
        let status = match e {
            pgt_core::Error::Io { .. } => PgtStatus::Io,
            _ => PgtStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PgtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgtStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PgtStatus::Internal
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(PgtStatus::NullPointer, format!("{name} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live handle
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(PgtStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn task_arg(task: u32) -> Result<TaskId, Failure> {
    TaskId::ALL
        .get(task as usize)
        .copied()
        .ok_or_else(|| Failure(PgtStatus::InvalidArgument, format!("unknown task {task}")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    // SAFETY: `out` was checked non-null by the caller of this helper
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pgt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pgt_bundle_load(
    path: *const c_char,
    out: *mut *mut PgtBundle,
) -> PgtStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bundle = load_bundle(&path)?;
        unsafe { write_out(out, PgtBundle(bundle)) };
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or a handle from [`pgt_bundle_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgt_bundle_free(bundle: *mut PgtBundle) {
    if !bundle.is_null() {
        // SAFETY: allocated by Box::into_raw in this crate
        drop(unsafe { Box::from_raw(bundle) });
    }
}

/// Latent dimension of the bundle; 0 for a null handle.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pgt_bundle_latent_dim(bundle: *const PgtBundle) -> usize {
    unsafe { bundle.as_ref() }.map_or(0, |b| b.0.latent_dim())
}

/// Encode one scripted-expert demonstration of `task` as a goal latent.
///
/// # Safety
/// `bundle` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_from_prompt(
    bundle: *const PgtBundle,
    task: u32,
    noise: f64,
    seed: u64,
    out: *mut *mut PgtLatent,
) -> PgtStatus {
    guard(|| {
        let b = unsafe { borrow(bundle, "bundle") }?;
        let task = task_arg(task)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&noise) {
            return Err(Failure(
                PgtStatus::InvalidArgument,
                format!("noise {noise} outside [0, 1]"),
            ));
        }
        let demo = demo_trajectory(task, EnvVariant::in_distribution(), noise, seed)?;
        let g = b.0.encode_prompt(&demo)?;
        unsafe { write_out(out, PgtLatent(g)) };
        Ok(())
    })
}

/// Copy `len` reals into a new latent.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_new(
    values: *const f64,
    len: usize,
    out: *mut *mut PgtLatent,
) -> PgtStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if len == 0 {
            return Err(Failure(
                PgtStatus::InvalidArgument,
                "a latent needs at least one entry".into(),
            ));
        }
        // SAFETY: caller guarantees `len` readable doubles
        let v = unsafe { std::slice::from_raw_parts(values, len) }.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Failure(
                PgtStatus::InvalidArgument,
                "latent entries must be finite".into(),
            ));
        }
        unsafe { write_out(out, PgtLatent(GoalLatent(v))) };
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_load(
    path: *const c_char,
    out: *mut *mut PgtLatent,
) -> PgtStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (g, _) = load_latent(&path)?;
        unsafe { write_out(out, PgtLatent(g)) };
        Ok(())
    })
}

/// Write the latent file format read by the CLI, with empty provenance.
///
/// # Safety
/// `latent` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_save(
    latent: *const PgtLatent,
    path: *const c_char,
) -> PgtStatus {
    guard(|| {
        let g = unsafe { borrow(latent, "latent") }?;
        let path = unsafe { path_arg(path, "path") }?;
        save_latent(&path, &g.0, &LatentMeta::default())?;
        Ok(())
    })
}

/// Dimension of the latent; 0 for a null handle.
///
/// # Safety
/// `latent` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_dim(latent: *const PgtLatent) -> usize {
    unsafe { latent.as_ref() }.map_or(0, |g| g.0.dim())
}

/// Copy the entries into `buf`, which must hold exactly the latent dimension.
///
/// # Safety
/// `latent` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_values(
    latent: *const PgtLatent,
    buf: *mut f64,
    len: usize,
) -> PgtStatus {
    guard(|| {
        let g = unsafe { borrow(latent, "latent") }?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != g.0.dim() {
            return Err(Failure(
                PgtStatus::InvalidArgument,
                format!("buffer holds {len} entries, latent has {}", g.0.dim()),
            ));
        }
        // SAFETY: caller guarantees `len` writable doubles
        unsafe { std::slice::from_raw_parts_mut(buf, len) }.copy_from_slice(&g.0 .0);
        Ok(())
    })
}

/// # Safety
/// `latent` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pgt_latent_free(latent: *mut PgtLatent) {
    if !latent.is_null() {
        // SAFETY: allocated by Box::into_raw in this crate
        drop(unsafe { Box::from_raw(latent) });
    }
}

#[no_mangle]
pub extern "C" fn pgt_tune_params_default() -> PgtTuneParams {
    let c = TuneConfig::default();
    PgtTuneParams {
        beta: c.beta,
        lr: c.lr,
        epochs: c.epochs,
        collect_n: c.collect_n,
        k_pos: c.k_pos,
        k_neg: c.k_neg,
        seed: c.seed,
        workers: c.workers,
    }
}

/// One preference-tuning round: collect under `g0`, pair the best against
/// the worst episodes by reward, and tune the latent. Deterministic in
/// `params.seed`.
///
/// # Safety
/// `bundle` and `g0` must be live handles, `params` readable, `out`
/// writable; `final_loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn pgt_tune_round(
    bundle: *const PgtBundle,
    g0: *const PgtLatent,
    task: u32,
    params: *const PgtTuneParams,
    out: *mut *mut PgtLatent,
    final_loss: *mut f64,
) -> PgtStatus {
    guard(|| {
        let b = unsafe { borrow(bundle, "bundle") }?;
        let g0 = unsafe { borrow(g0, "g0") }?;
        let p = unsafe { borrow(params, "params") }?;
        let task = task_arg(task)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = TuneConfig {
            beta: p.beta,
            lr: p.lr,
            epochs: p.epochs,
            collect_n: p.collect_n,
            k_pos: p.k_pos,
            k_neg: p.k_neg,
            seed: p.seed,
            workers: p.workers,
            ..TuneConfig::default()
        };
        cfg.validate()
            .map_err(|e| Failure(PgtStatus::InvalidArgument, e.to_string()))?;
        let (_, ds) = collect_dataset(
            &b.0,
            &g0.0,
            task,
            EnvVariant::in_distribution(),
            &cfg,
            stream_seed(cfg.seed, Namespace::Round, 1),
            stream_seed(cfg.seed, Namespace::Pairing, 1),
        )?;
        let tuned = tune(&b.0, &g0.0, &ds, &cfg)?;
        if !final_loss.is_null() {
            // SAFETY: non-null and writable per the contract
            unsafe { *final_loss = *tuned.losses.last().expect("epochs + 1 entries") };
        }
        unsafe { write_out(out, PgtLatent(tuned.latent)) };
        Ok(())
    })
}

/// Mean task metric of `n` in-distribution episodes and its standard error.
///
/// # Safety
/// `bundle` and `latent` must be live handles; `value` and `stderr_out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pgt_evaluate(
    bundle: *const PgtBundle,
    latent: *const PgtLatent,
    task: u32,
    n: usize,
    seed: u64,
    value: *mut f64,
    stderr_out: *mut f64,
) -> PgtStatus {
    guard(|| {
        let b = unsafe { borrow(bundle, "bundle") }?;
        let g = unsafe { borrow(latent, "latent") }?;
        let task = task_arg(task)?;
        if value.is_null() || stderr_out.is_null() {
            return Err(null("output pointer"));
        }
        let r = evaluate(
            &b.0,
            &Adapter::none(),
            &g.0,
            task,
            EnvVariant::in_distribution(),
            n,
            seed,
            1,
        )?;
        // SAFETY: both checked non-null
        unsafe {
            *value = r.value;
            *stderr_out = r.stderr;
        }
        Ok(())
    })
}
