//! C interface to kelly-lab.
//!
//! Objects cross the boundary as opaque handles created by a `*_new` or
//! `*_load` function and released with the matching `*_free`. Every fallible
//! call returns a [`KlStatus`]; on failure [`kl_last_error`] describes the
//! cause. Output arrays are caller-allocated and must have exactly the
//! documented length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kelly_lab::analytic;
use kelly_lab::config::ExperimentConfig;
use kelly_lab::env::{Policy, PortfolioEnv};
use kelly_lab::impact::{trade_cost, ImpactParams};
use kelly_lab::rl::{evaluate, ActorCritic, Checkpoint, NetPolicy};
use kelly_lab::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Io = 5,
    Dimension = 6,
    Numerical = 7,
    Lifecycle = 8,
    Linalg = 9,
    Hmm = 10,
    Panic = 99,
}

/// Summary of an evaluation run. Growth fields are NaN when every episode
/// went bankrupt.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEvalStats {
    pub episodes: u64,
    pub bankruptcies: u64,
    pub mean_growth: f64,
    pub mad: f64,
}

/// Parsed experiment configuration.
pub struct KlConfig {
    inner: ExperimentConfig,
}

/// One portfolio environment.
pub struct KlEnv {
    inner: PortfolioEnv,
}

/// Trained policy loaded from a checkpoint.
pub struct KlPolicy {
    inner: NetPolicy,
}

struct Failure(KlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) => KlStatus::Config,
            Error::Parse(_) => KlStatus::Parse,
            Error::Io(_) => KlStatus::Io,
            Error::Dimension(_) => KlStatus::Dimension,
            Error::Numerical(_) => KlStatus::Numerical,
            Error::Lifecycle(_) => KlStatus::Lifecycle,
            Error::Factorization { .. } | Error::Singular(_) | Error::Markov(_) => KlStatus::Linalg,
            Error::Hmm(_) => KlStatus::Hmm,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Outcome>(f: F) -> KlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(KlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(KlStatus::InvalidArgument, msg.into())
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len != want {
        return Err(Failure(KlStatus::Dimension, format!("{what} has length {len}, expected {want}")));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len != want {
        return Err(Failure(KlStatus::Dimension, format!("{what} has length {len}, expected {want}")));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads an experiment file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kl_config_load(path: *const c_char, out: *mut *mut KlConfig) -> KlStatus {
    guard(|| {
        let path = text(path, "path")?;
        let cfg = ExperimentConfig::load(Path::new(path))?;
        put(out, Box::into_raw(Box::new(KlConfig { inner: cfg })), "out")
    })
}

/// Parses an experiment from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kl_config_parse(toml: *const c_char, out: *mut *mut KlConfig) -> KlStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_toml_str(text(toml, "toml")?)?;
        put(out, Box::into_raw(Box::new(KlConfig { inner: cfg })), "out")
    })
}

/// Writes the 64-character SHA-256 of the configuration plus a NUL into
/// `buf`, which must hold at least 65 bytes.
///
/// # Safety
/// `config` must come from this library; `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn kl_config_hash(config: *const KlConfig, buf: *mut c_char, len: usize) -> KlStatus {
    guard(|| {
        let hash = get(config, "config")?.inner.hash();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len <= hash.len() {
            return Err(invalid(format!("buffer of {len} bytes cannot hold the hash")));
        }
        ptr::copy_nonoverlapping(hash.as_ptr().cast(), buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kl_config_free(config: *mut KlConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Number of assets in the configured market.
///
/// # Safety
/// `config` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kl_config_n_assets(config: *const KlConfig, out: *mut usize) -> KlStatus {
    guard(|| {
        let model = get(config, "config")?.inner.regime_model()?;
        put(out, model.n_assets(), "out")
    })
}

/// Kelly-optimal weights of one regime, cash first (`len` = assets + 1), and
/// their expected growth rate per annum.
///
/// # Safety
/// `config` must come from this library; `weights` must hold `len` doubles
/// and `growth` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kl_solve(
    config: *const KlConfig,
    regime: usize,
    weights: *mut f64,
    len: usize,
    growth: *mut f64,
) -> KlStatus {
    guard(|| {
        let model = get(config, "config")?.inner.regime_model()?;
        let params = model
            .regimes
            .get(regime)
            .ok_or_else(|| invalid(format!("regime {regime} out of range for {} regimes", model.n_regimes())))?;
        let report = analytic::solve(params)?;
        slice_mut(weights, len, model.n_assets() + 1, "weights")?.copy_from_slice(&report.weights.all());
        put(growth, report.growth, "growth")
    })
}

/// Execution cost of trading `shares` over one period of length `dt` while
/// the price moves linearly from `s_start` to `s_end`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kl_trade_cost(
    s_start: f64,
    s_end: f64,
    shares: f64,
    dt: f64,
    eta: f64,
    gamma: f64,
    out: *mut f64,
) -> KlStatus {
    guard(|| {
        let params = ImpactParams::new(eta, gamma)?;
        if dt.is_nan() || dt <= 0.0 {
            return Err(invalid("dt must be positive"));
        }
        put(out, trade_cost(s_start, s_end, shares, dt, &params), "out")
    })
}

/// Creates an environment from the configuration.
///
/// # Safety
/// `config` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kl_env_new(config: *const KlConfig, out: *mut *mut KlEnv) -> KlStatus {
    guard(|| {
        let env = PortfolioEnv::new(get(config, "config")?.inner.env_config()?)?;
        put(out, Box::into_raw(Box::new(KlEnv { inner: env })), "out")
    })
}

/// # Safety
/// `env` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kl_env_free(env: *mut KlEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation length; 0 for a NULL handle.
///
/// # Safety
/// `env` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kl_env_obs_dim(env: *const KlEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.config().obs_dim())
}

/// Action length (number of assets); 0 for a NULL handle.
///
/// # Safety
/// `env` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kl_env_n_assets(env: *const KlEnv) -> usize {
    env.as_ref().map_or(0, |e| e.inner.config().n_assets())
}

/// Current wealth; NaN for a NULL handle.
///
/// # Safety
/// `env` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kl_env_wealth(env: *const KlEnv) -> f64 {
    env.as_ref().map_or(f64::NAN, |e| e.inner.wealth())
}

/// Starts an episode on the price path drawn from `seed` and writes the
/// first observation.
///
/// # Safety
/// `env` must be live; `obs` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kl_env_reset(env: *mut KlEnv, seed: u64, obs: *mut f64, obs_len: usize) -> KlStatus {
    guard(|| {
        let env = &mut get_mut(env, "env")?.inner;
        let want = env.config().obs_dim();
        let out = slice_mut(obs, obs_len, want, "obs")?;
        out.copy_from_slice(env.reset(seed).as_slice());
        Ok(())
    })
}

/// Rebalances to the stock weights in `action` and advances one period.
/// `bankrupt` may be NULL.
///
/// # Safety
/// `env` must be live; `action` must hold `action_len` doubles, `obs` must
/// hold `obs_len` doubles, and `reward`, `done` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn kl_env_step(
    env: *mut KlEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut bool,
    bankrupt: *mut bool,
) -> KlStatus {
    guard(|| {
        let env = &mut get_mut(env, "env")?.inner;
        let a = slice(action, action_len, env.config().n_assets(), "action")?;
        let out = slice_mut(obs, obs_len, env.config().obs_dim(), "obs")?;
        if reward.is_null() || done.is_null() {
            return Err(null("reward or done"));
        }
        let step = env.step(a)?;
        out.copy_from_slice(step.observation.as_slice());
        reward.write(step.reward);
        done.write(step.done);
        if !bankrupt.is_null() {
            bankrupt.write(step.info.bankrupt);
        }
        Ok(())
    })
}

/// Loads a trained policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kl_policy_load(path: *const c_char, out: *mut *mut KlPolicy) -> KlStatus {
    guard(|| {
        let ck = Checkpoint::load(Path::new(text(path, "path")?))?;
        put(out, Box::into_raw(Box::new(KlPolicy { inner: NetPolicy::new(ck.net, ck.hmm) })), "out")
    })
}

/// # Safety
/// `policy` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kl_policy_free(policy: *mut KlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Deterministic action of the policy for the environment's current state.
///
/// # Safety
/// Both handles must be live; `obs` must hold `obs_len` doubles and `action`
/// `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kl_policy_act(
    policy: *const KlPolicy,
    env: *const KlEnv,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    action_len: usize,
) -> KlStatus {
    guard(|| {
        let policy = &get(policy, "policy")?.inner;
        let env = &get(env, "env")?.inner;
        if policy.net.obs_dim() != env.config().obs_dim() || policy.net.action_dim() != env.config().n_assets() {
            return Err(Failure(KlStatus::Dimension, "policy does not match the environment".into()));
        }
        let o = slice(obs, obs_len, env.config().obs_dim(), "obs")?;
        let out = slice_mut(action, action_len, env.config().n_assets(), "action")?;
        let a = policy.clone().act(env, &kelly_lab::env::Observation(o.to_vec()));
        out.copy_from_slice(&a);
        Ok(())
    })
}

/// Evaluates the policy on `episodes` evaluation paths of `seed` in the
/// configured environment.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kl_policy_evaluate(
    policy: *const KlPolicy,
    config: *const KlConfig,
    episodes: usize,
    seed: u64,
    out: *mut KlEvalStats,
) -> KlStatus {
    guard(|| {
        let policy = &get(policy, "policy")?.inner;
        let env = get(config, "config")?.inner.env_config()?;
        if episodes == 0 {
            return Err(invalid("episodes must be positive"));
        }
        let s = evaluate(&env, policy, episodes, seed)?;
        put(
            out,
            KlEvalStats {
                episodes: s.episodes as u64,
                bankruptcies: s.bankruptcies as u64,
                mean_growth: s.mean_growth.unwrap_or(f64::NAN),
                mad: s.mad.unwrap_or(f64::NAN),
            },
            "out",
        )
    })
}
