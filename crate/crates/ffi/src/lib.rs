//! C ABI over `dre`.
//!
//! Environments live behind an opaque `DreEnv` handle. Every fallible call
//! returns a `DreStatus`; on failure `dre_last_error` gives a message for the
//! calling thread. Panics are caught and reported as `DRE_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dre::clusters::{backward_cluster, classify_b_shape, communicating_cluster, forward_cluster, Shape};
use dre::duality::{cubic_root, CubicBound};
use dre::lattice::{read_snapshot, sample_model, write_snapshot, EnvironmentGrid};
use dre::montecarlo::{estimate_theta, Statistic, TrialPlan};
use dre::{DreError, Lattice, ModelId, Site, Window};

/// Status codes returned by every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DreStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownModel = 3,
    InvalidMeasure = 4,
    InvalidWindow = 5,
    OutsideWindow = 6,
    UnsupportedDimension = 7,
    ModelAssumption = 8,
    Parse = 9,
    Io = 10,
    Internal = 11,
    Panic = 12,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DreClusterKind {
    Forward = 0,
    Backward = 1,
    Communicating = 2,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DreShape {
    Finite = 0,
    FullWindow = 1,
    BlockedAbove = 2,
    BlockedBelow = 3,
    Indeterminate = 4,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DreStatistic {
    ReachC = 0,
    ReachB = 1,
    ReachM = 2,
    SizeM = 3,
    ReachOtsp = 4,
}

/// Opaque handle to a sampled or loaded environment.
pub struct DreEnv {
    grid: EnvironmentGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &DreError) -> DreStatus {
    match e {
        DreError::InvalidMeasure(_) => DreStatus::InvalidMeasure,
        DreError::InvalidWindow(_) => DreStatus::InvalidWindow,
        DreError::OutsideWindow(_) => DreStatus::OutsideWindow,
        DreError::UnsupportedDimension(_) => DreStatus::UnsupportedDimension,
        DreError::ModelAssumption { .. } => DreStatus::ModelAssumption,
        DreError::InvalidArgument(_) => DreStatus::InvalidArgument,
        DreError::UnknownModel { .. } => DreStatus::UnknownModel,
        DreError::Parse { .. } => DreStatus::Parse,
        DreError::Internal(_) => DreStatus::Internal,
        DreError::Io(_) => DreStatus::Io,
    }
}

struct Fail(DreStatus, String);

impl From<DreError> for Fail {
    fn from(e: DreError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(DreStatus::Io, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DreStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DreStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("panic inside dre");
            DreStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DreStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(DreStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn env_ref<'a>(env: *const DreEnv) -> Result<&'a DreEnv, Fail> {
    env.as_ref().ok_or_else(|| null("env"))
}

/// Message for the last failing call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dre_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dre_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples catalog model `model` at weight `p` on `[-radius, radius]^d`.
///
/// # Safety
/// `model` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dre_env_sample(
    model: *const c_char,
    p: f64,
    d: u32,
    radius: i64,
    seed: u64,
    out: *mut *mut DreEnv,
) -> DreStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = ModelId::parse(text(model, "model")?, p, d as usize)?;
        let grid = sample_model(&m, &Window::square(d as usize, radius)?, seed)?;
        *out = Box::into_raw(Box::new(DreEnv { grid }));
        Ok(())
    })
}

/// Loads a snapshot file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dre_env_load(path: *const c_char, out: *mut *mut DreEnv) -> DreStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let f = File::open(text(path, "path")?)?;
        let grid = read_snapshot(BufReader::new(f))?;
        *out = Box::into_raw(Box::new(DreEnv { grid }));
        Ok(())
    })
}

/// Writes a snapshot file.
///
/// # Safety
/// `env` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dre_env_save(env: *const DreEnv, path: *const c_char) -> DreStatus {
    guard(|| {
        let env = env_ref(env)?;
        let mut f = BufWriter::new(File::create(text(path, "path")?)?);
        write_snapshot(&env.grid, &mut f)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `env` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dre_env_free(env: *mut DreEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of sites in the window.
///
/// # Safety
/// `env` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dre_env_len(env: *const DreEnv, out: *mut u64) -> DreStatus {
    guard(|| {
        let env = env_ref(env)?;
        *out.as_mut().ok_or_else(|| null("out"))? = env.grid.window().len() as u64;
        Ok(())
    })
}

unsafe fn site_from(coords: *const i64, d: usize) -> Result<Site, Fail> {
    if coords.is_null() {
        return Err(null("coords"));
    }
    Ok(Site::new(std::slice::from_raw_parts(coords, d)))
}

/// Arrow bitmask at a site: bit `i` is `+e_{i+1}`, bit `d+i` is `-e_{i+1}`.
///
/// # Safety
/// `coords` must point to `d` coordinates, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dre_env_arrows(env: *const DreEnv, coords: *const i64, out: *mut u16) -> DreStatus {
    guard(|| {
        let env = env_ref(env)?;
        let s = site_from(coords, env.grid.window().dim())?;
        let a = env.grid.arrows(&s).ok_or(DreError::OutsideWindow(s))?;
        *out.as_mut().ok_or_else(|| null("out"))? = a.0;
        Ok(())
    })
}

/// Size of the cluster of `kind` (a `DreClusterKind`) rooted at `coords`, and whether it
/// contains a window edge site.
///
/// # Safety
/// `coords` must point to `d` coordinates; `size` and `touches` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dre_cluster(
    env: *const DreEnv,
    coords: *const i64,
    kind: i32,
    size: *mut u64,
    touches: *mut i32,
) -> DreStatus {
    guard(|| {
        let env = env_ref(env)?;
        let s = site_from(coords, env.grid.window().dim())?;
        let c = match kind {
            k if k == DreClusterKind::Forward as i32 => forward_cluster(&env.grid, &s)?,
            k if k == DreClusterKind::Backward as i32 => backward_cluster(&env.grid, &s)?,
            k if k == DreClusterKind::Communicating as i32 => communicating_cluster(&env.grid, &s)?,
            k => return Err(Fail(DreStatus::InvalidArgument, format!("unknown cluster kind {k}"))),
        };
        *size.as_mut().ok_or_else(|| null("size"))? = c.len() as u64;
        *touches.as_mut().ok_or_else(|| null("touches"))? = c.touches_boundary as i32;
        Ok(())
    })
}

/// Shape of `B_x` in a 2-d environment.
///
/// # Safety
/// `env` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dre_classify(env: *const DreEnv, x: i64, y: i64, out: *mut DreShape) -> DreStatus {
    guard(|| {
        let env = env_ref(env)?;
        let r = classify_b_shape(&env.grid, &Site::xy(x, y))?;
        *out.as_mut().ok_or_else(|| null("out"))? = match r.shape {
            Shape::Finite => DreShape::Finite,
            Shape::FullWindow => DreShape::FullWindow,
            Shape::BlockedAbove => DreShape::BlockedAbove,
            Shape::BlockedBelow => DreShape::BlockedBelow,
            Shape::Indeterminate => DreShape::Indeterminate,
        };
        Ok(())
    })
}

/// Monte Carlo estimate and standard error of `statistic` (a
/// `DreStatistic`) over `trials`
/// independent environments.
///
/// # Safety
/// `model` must be a NUL-terminated string; `estimate` and `se` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dre_estimate(
    model: *const c_char,
    p: f64,
    d: u32,
    radius: i64,
    trials: u64,
    seed: u64,
    statistic: i32,
    estimate: *mut f64,
    se: *mut f64,
) -> DreStatus {
    guard(|| {
        let m = ModelId::parse(text(model, "model")?, p, d as usize)?;
        let stat = [
            (DreStatistic::ReachC, Statistic::BoundaryReachC),
            (DreStatistic::ReachB, Statistic::BoundaryReachB),
            (DreStatistic::ReachM, Statistic::BoundaryReachM),
            (DreStatistic::SizeM, Statistic::ClusterSizeM),
            (DreStatistic::ReachOtsp, Statistic::OtspReach),
        ]
        .into_iter()
        .find(|(k, _)| *k as i32 == statistic)
        .map(|(_, s)| s)
        .ok_or_else(|| Fail(DreStatus::InvalidArgument, format!("unknown statistic {statistic}")))?;
        let r = estimate_theta(&TrialPlan::new(m, radius, trials as usize, seed, stat)?)?;
        *estimate.as_mut().ok_or_else(|| null("estimate"))? = r.estimate;
        *se.as_mut().ok_or_else(|| null("se"))? = r.se;
        Ok(())
    })
}

/// Root in (0,1) of `p^3 - p^2 + 2p - 1` (`fsosp != 0`) or `p^3 + 2p - 1`.
#[no_mangle]
pub extern "C" fn dre_cubic_root(fsosp: i32) -> f64 {
    cubic_root(if fsosp != 0 { CubicBound::Fsosp } else { CubicBound::Otsp })
}
