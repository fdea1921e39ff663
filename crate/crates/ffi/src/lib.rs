//! C interface to the attack toolkit.
//!
//! A session owns a dataset, its split and (once trained or loaded) a target
//! recommender. Every fallible call returns an [`SaStatus`]; on failure the
//! message is available from [`sa_last_error`] on the same thread until the
//! next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use socattack::attack::{run_attack, AttackResult, Scenario, Strategy};
use socattack::community::PartitionResult;
use socattack::metrics::Metric;
use socattack::recenv::RecModel;
use socattack::runner::{build_partition, build_target, load_world, RunConfig, World};
use socattack::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    InvalidConfig = 4,
    InvalidState = 5,
    Unsupported = 6,
    BudgetViolation = 7,
    ConstraintInfeasible = 8,
    UndefinedMetric = 9,
    TrainingDivergence = 10,
    Io = 11,
    Panic = 12,
}

/// Metric selector for [`sa_result_metric`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaMetric {
    Ndcg = 0,
    Recall = 1,
    Precision = 2,
}

impl From<SaMetric> for Metric {
    fn from(m: SaMetric) -> Self {
        match m {
            SaMetric::Ndcg => Metric::Ndcg,
            SaMetric::Recall => Metric::Recall,
            SaMetric::Precision => Metric::Precision,
        }
    }
}

/// Opaque session handle.
pub struct SaSession {
    config: RunConfig,
    world: World,
    target: Option<RecModel>,
    partition: Option<PartitionResult>,
}

/// Opaque attack outcome handle.
pub struct SaAttackResult {
    inner: AttackResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SaStatus {
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::InvalidAction(_) | Error::Json(_) | Error::Csv(_) => {
            SaStatus::InvalidInput
        }
        Error::InvalidConfig(_) => SaStatus::InvalidConfig,
        Error::InvalidState(_) | Error::EpisodeFinished(_) => SaStatus::InvalidState,
        Error::UnsupportedMode(_) => SaStatus::Unsupported,
        Error::BudgetViolation(_) => SaStatus::BudgetViolation,
        Error::ConstraintInfeasible(_) => SaStatus::ConstraintInfeasible,
        Error::UndefinedMetric(_) => SaStatus::UndefinedMetric,
        Error::TrainingDivergence(_) => SaStatus::TrainingDivergence,
        Error::Io(_) => SaStatus::Io,
    }
}

struct Fail(SaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside socattack".into());
            SaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SaStatus::NullArgument, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(SaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn session<'a>(s: *mut SaSession) -> Result<&'a mut SaSession, Fail> {
    s.as_mut().ok_or_else(|| null("session"))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a session from a JSON run configuration (NULL for defaults) and
/// builds its dataset and split.
///
/// # Safety
/// `config_json` is NULL or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_session_new(config_json: *const c_char, out: *mut *mut SaSession) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(read_str(config_json, "config")?).map_err(Error::from)?
        };
        let mut config = config;
        let world = load_world(&config)?;
        config.resolve(&world.dataset);
        let boxed = Box::new(SaSession { config, world, target: None, partition: None });
        *out = Box::into_raw(boxed);
        Ok(())
    })
}

/// Releases a session. NULL is ignored.
///
/// # Safety
/// `s` is NULL or a handle from [`sa_session_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_session_free(s: *mut SaSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of real users and items in the session's dataset.
///
/// # Safety
/// `s` is a live session; `users` and `items` are writable.
#[no_mangle]
pub unsafe extern "C" fn sa_session_sizes(s: *mut SaSession, users: *mut usize, items: *mut usize) -> SaStatus {
    guard(|| {
        let s = session(s)?;
        if users.is_null() || items.is_null() {
            return Err(null("output"));
        }
        *users = s.world.dataset.real_user_count();
        *items = s.world.dataset.item_count();
        Ok(())
    })
}

/// Trains the target (or loads `target_archive` from the config) and
/// partitions the social graph. Required before attacks.
///
/// # Safety
/// `s` is a live session.
#[no_mangle]
pub unsafe extern "C" fn sa_session_prepare(s: *mut SaSession) -> SaStatus {
    guard(|| {
        let s = session(s)?;
        s.target = Some(build_target(&s.config, &s.world)?);
        s.partition = Some(build_partition(&s.config, &s.world)?);
        Ok(())
    })
}

/// Loads a target archive written by `socattack train-target` in place of
/// training.
///
/// # Safety
/// `s` is a live session; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sa_session_load_target(s: *mut SaSession, path: *const c_char) -> SaStatus {
    guard(|| {
        let s = session(s)?;
        s.config.target_archive = Some(PathBuf::from(read_str(path, "path")?));
        s.target = Some(build_target(&s.config, &s.world)?);
        if s.partition.is_none() {
            s.partition = Some(build_partition(&s.config, &s.world)?);
        }
        Ok(())
    })
}

/// Runs one strategy (`multi`, `random`, `cold`, ...) against the prepared
/// target with the session's attack settings.
///
/// # Safety
/// `s` is a live session, `strategy` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sa_session_attack(
    s: *mut SaSession,
    strategy: *const c_char,
    out: *mut *mut SaAttackResult,
) -> SaStatus {
    guard(|| {
        let s = session(s)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let strategy = Strategy::parse(read_str(strategy, "strategy")?)?;
        let (Some(target), Some(part)) = (&s.target, &s.partition) else {
            return Err(Fail(SaStatus::InvalidState, "session is not prepared".into()));
        };
        let mut cfg = s.config.attack.clone();
        cfg.strategy = strategy;
        let scenario = Scenario::new(&s.world.dataset, &s.world.split, target, part);
        let inner = run_attack(&cfg, &scenario)?;
        *out = Box::into_raw(Box::new(SaAttackResult { inner }));
        Ok(())
    })
}

/// Metric@k of the clean (`attacked = false`) or attacked evaluation.
///
/// # Safety
/// `r` is a live result; `value` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_result_metric(
    r: *const SaAttackResult,
    metric: SaMetric,
    k: usize,
    attacked: bool,
    value: *mut f64,
) -> SaStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("result"))?;
        if value.is_null() {
            return Err(null("value"));
        }
        let report = if attacked { &r.inner.attacked } else { &r.inner.clean };
        let v = report.get(metric.into(), k);
        if v.is_nan() {
            return Err(Fail(SaStatus::UndefinedMetric, format!("no value at k={k}")));
        }
        *value = v;
        Ok(())
    })
}

/// Number of injected fake users.
///
/// # Safety
/// `r` is NULL or a live result.
#[no_mangle]
pub unsafe extern "C" fn sa_result_fake_count(r: *const SaAttackResult) -> usize {
    r.as_ref().map_or(0, |r| r.inner.fakes.len())
}

/// Whether every fake respected the budget and community constraints.
///
/// # Safety
/// `r` is NULL or a live result.
#[no_mangle]
pub unsafe extern "C" fn sa_result_constraints_ok(r: *const SaAttackResult) -> bool {
    r.as_ref().is_some_and(|r| r.inner.audit.passed())
}

/// The whole result as JSON. Free with [`sa_string_free`]; NULL on failure.
///
/// # Safety
/// `r` is NULL or a live result.
#[no_mangle]
pub unsafe extern "C" fn sa_result_json(r: *const SaAttackResult) -> *mut c_char {
    let Some(r) = r.as_ref() else {
        set_error("result is null".into());
        return ptr::null_mut();
    };
    match serde_json::to_string(&r.inner) {
        Ok(s) => CString::new(s).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Releases an attack result. NULL is ignored.
///
/// # Safety
/// `r` is NULL or a handle from [`sa_session_attack`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_result_free(r: *mut SaAttackResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `p` is NULL or a string from [`sa_result_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}
