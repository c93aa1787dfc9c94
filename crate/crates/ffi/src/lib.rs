//! C ABI over the deqcd simulation library.
//!
//! Objects are opaque handles created by the `deqcd_model_*` and `deqcd_scenario_*` constructors or by a batch run and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DeqcdStatus`]; on failure the message is available from
//! [`deqcd_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use deqcd::metrics::{estimate_far, pdc_bound_hinf};
use deqcd::sim::{run_batch, run_once, RunConfig, RunTrace};
use deqcd::{ChangePoint, Density, Error, FusionPolicy, FusionRule, Scenario, SensorModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeqcdStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Domain = 3,
    Contract = 4,
    InfiniteDivergence = 5,
    Incommensurable = 6,
    Model = 7,
    Calibration = 8,
    Estimation = 9,
    Io = 10,
    Panic = 11,
}

/// Fusion rule selector. `Fractional` reads the sampling probability argument.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeqcdRule {
    Max = 0,
    Sum = 1,
    All = 2,
    OracleCusum = 3,
    Fractional = 4,
}

/// One sensor's local procedure.
pub struct DeqcdModel(SensorModel);

/// A sensor network with its affected set and change point.
pub struct DeqcdScenario(Scenario);

/// The traces of a batch of runs.
pub struct DeqcdTraces(Vec<RunTrace>);

/// Outcome of one run. `change_point` is 0 when the change never happens.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeqcdRunSummary {
    pub stop_slot: u64,
    pub censored: bool,
    pub change_point: u64,
    pub seed: u64,
    pub sensors: usize,
}

/// Per-sensor counters of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeqcdSensorCounters {
    pub samples_pre: u64,
    pub samples_post: u64,
    pub transmissions_pre: u64,
    pub transmissions_post: u64,
    pub max_skip_run: u64,
    pub final_w: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DeqcdStatus {
    match err {
        Error::Config(_) => DeqcdStatus::Config,
        Error::Domain(_) => DeqcdStatus::Domain,
        Error::Contract(_) => DeqcdStatus::Contract,
        Error::InfiniteDivergence(_) => DeqcdStatus::InfiniteDivergence,
        Error::Incommensurable(_) => DeqcdStatus::Incommensurable,
        Error::Model(_) => DeqcdStatus::Model,
        Error::Calibration(_) => DeqcdStatus::Calibration,
        Error::Estimation(_) => DeqcdStatus::Estimation,
        Error::Io(_) => DeqcdStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DeqcdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DeqcdStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DeqcdStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DeqcdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, len))
    }
}

fn rule_of(rule: DeqcdRule, sampling_prob: f64) -> FusionRule {
    match rule {
        DeqcdRule::Max => FusionRule::Max,
        DeqcdRule::Sum => FusionRule::Sum,
        DeqcdRule::All => FusionRule::All,
        DeqcdRule::OracleCusum => FusionRule::OracleCusum,
        DeqcdRule::Fractional => FusionRule::FractionalSum { sampling_prob },
    }
}

fn summary_of(t: &RunTrace) -> DeqcdRunSummary {
    DeqcdRunSummary {
        stop_slot: t.stop_slot,
        censored: t.censored,
        change_point: match t.change_point {
            ChangePoint::At(g) => g,
            ChangePoint::Never => 0,
        },
        seed: t.seed,
        sensors: t.sensors.len(),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn deqcd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn deqcd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Gaussian sensor: N(`pre_mean`, `variance`) before the change, N(`post_mean`, `variance`) after.
///
/// # Safety
/// `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_model_gaussian(
    pre_mean: f64,
    post_mean: f64,
    variance: f64,
    mu: f64,
    h: f64,
    d: f64,
    out_model: *mut *mut DeqcdModel,
) -> DeqcdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let m = SensorModel::new(
            Density::gaussian(pre_mean, variance)?,
            Density::gaussian(post_mean, variance)?,
            mu,
            h,
            d,
        )?;
        *slot = Box::into_raw(Box::new(DeqcdModel(m)));
        Ok(())
    })
}

/// Discrete sensor on `support` with pre- and post-change probabilities, all of length `len`.
///
/// # Safety
/// The three arrays must hold `len` readable values; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_model_discrete(
    support: *const f64,
    pre_probs: *const f64,
    post_probs: *const f64,
    len: usize,
    mu: f64,
    h: f64,
    d: f64,
    out_model: *mut *mut DeqcdModel,
) -> DeqcdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let support = slice(support, len, "support")?.to_vec();
        let pre = slice(pre_probs, len, "pre_probs")?.to_vec();
        let post = slice(post_probs, len, "post_probs")?.to_vec();
        let m = SensorModel::new(
            Density::discrete(support.clone(), pre)?,
            Density::discrete(support, post)?,
            mu,
            h,
            d,
        )?;
        *slot = Box::into_raw(Box::new(DeqcdModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `deqcd_model_*` constructor and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn deqcd_model_free(model: *mut DeqcdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Duty-cycle bound `mu / (mu + D(f0 || f1))` for an unbounded `h`.
///
/// # Safety
/// `model` must be a live handle and `out_bound` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_model_pdc_bound_hinf(
    model: *const DeqcdModel,
    out_bound: *mut f64,
) -> DeqcdStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        *out(out_bound, "out_bound")? = pdc_bound_hinf(&m.0);
        Ok(())
    })
}

/// `count` copies of `model`; `affected` lists sensor indices, `change_point` 0 means never.
///
/// # Safety
/// `model` must be live, `affected` must hold `n_affected` values, `out_scenario` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_scenario_identical(
    model: *const DeqcdModel,
    count: usize,
    affected: *const usize,
    n_affected: usize,
    change_point: u64,
    out_scenario: *mut *mut DeqcdScenario,
) -> DeqcdStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let slot = out(out_scenario, "out_scenario")?;
        let affected = slice(affected, n_affected, "affected")?.to_vec();
        let cp = if change_point == 0 {
            ChangePoint::Never
        } else {
            ChangePoint::At(change_point)
        };
        let s = Scenario::identical(m.0.clone(), count, affected, cp)?;
        *slot = Box::into_raw(Box::new(DeqcdScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from a scenario constructor and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn deqcd_scenario_free(scenario: *mut DeqcdScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// First-order threshold meeting false alarm rate `alpha` with `sensors` sensors.
///
/// # Safety
/// `out_threshold` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_threshold_for_far(
    rule: DeqcdRule,
    alpha: f64,
    sensors: usize,
    out_threshold: *mut f64,
) -> DeqcdStatus {
    guard(|| {
        let slot = out(out_threshold, "out_threshold")?;
        *slot = deqcd::fusion::threshold_for_far(rule_of(rule, 1.0), alpha, sensors)?;
        Ok(())
    })
}

unsafe fn config(
    scenario: *const DeqcdScenario,
    rule: DeqcdRule,
    sampling_prob: f64,
    threshold: f64,
    cap: u64,
    seed: u64,
) -> Result<RunConfig, Failure> {
    let s = borrow(scenario, "scenario")?;
    let policy = FusionPolicy::new(rule_of(rule, sampling_prob), threshold)?;
    Ok(RunConfig::new(s.0.clone(), policy, cap, seed)?)
}

/// One run with the given seed. `sampling_prob` is read only by `Fractional`.
///
/// # Safety
/// `scenario` must be live and `out_summary` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_run_once(
    scenario: *const DeqcdScenario,
    rule: DeqcdRule,
    sampling_prob: f64,
    threshold: f64,
    cap: u64,
    seed: u64,
    out_summary: *mut DeqcdRunSummary,
) -> DeqcdStatus {
    guard(|| {
        let cfg = config(scenario, rule, sampling_prob, threshold, cap, seed)?;
        let slot = out(out_summary, "out_summary")?;
        *slot = summary_of(&run_once(&cfg));
        Ok(())
    })
}

/// `runs` independent runs; run `i` is seeded from `seed` and `i`.
///
/// # Safety
/// `scenario` must be live and `out_traces` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_run_batch(
    scenario: *const DeqcdScenario,
    rule: DeqcdRule,
    sampling_prob: f64,
    threshold: f64,
    cap: u64,
    seed: u64,
    runs: usize,
    out_traces: *mut *mut DeqcdTraces,
) -> DeqcdStatus {
    guard(|| {
        let cfg = config(scenario, rule, sampling_prob, threshold, cap, seed)?;
        let slot = out(out_traces, "out_traces")?;
        let traces = run_batch(&cfg, runs)?;
        *slot = Box::into_raw(Box::new(DeqcdTraces(traces)));
        Ok(())
    })
}

/// # Safety
/// `traces` must be live; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_traces_len(
    traces: *const DeqcdTraces,
    out_len: *mut usize,
) -> DeqcdStatus {
    guard(|| {
        let t = borrow(traces, "traces")?;
        *out(out_len, "out_len")? = t.0.len();
        Ok(())
    })
}

/// # Safety
/// `traces` must be live; `out_summary` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_traces_summary(
    traces: *const DeqcdTraces,
    run: usize,
    out_summary: *mut DeqcdRunSummary,
) -> DeqcdStatus {
    guard(|| {
        let t = borrow(traces, "traces")?;
        let slot = out(out_summary, "out_summary")?;
        let Some(trace) = t.0.get(run) else {
            return Err(
                Error::Domain(format!("run {run} out of range for {} traces", t.0.len())).into(),
            );
        };
        *slot = summary_of(trace);
        Ok(())
    })
}

/// # Safety
/// `traces` must be live; `out_counters` writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_traces_sensor(
    traces: *const DeqcdTraces,
    run: usize,
    sensor: usize,
    out_counters: *mut DeqcdSensorCounters,
) -> DeqcdStatus {
    guard(|| {
        let t = borrow(traces, "traces")?;
        let slot = out(out_counters, "out_counters")?;
        let Some(c) = t.0.get(run).and_then(|r| r.sensors.get(sensor)) else {
            return Err(Error::Domain(format!("no sensor {sensor} in run {run}")).into());
        };
        *slot = DeqcdSensorCounters {
            samples_pre: c.samples_pre,
            samples_post: c.samples_post,
            transmissions_pre: c.transmissions_pre,
            transmissions_post: c.transmissions_post,
            max_skip_run: c.max_skip_run,
            final_w: c.final_w,
        };
        Ok(())
    })
}

/// False alarm rate of a pre-change batch with its standard error.
///
/// # Safety
/// `traces` must be live; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn deqcd_traces_estimate_far(
    traces: *const DeqcdTraces,
    out_far: *mut f64,
    out_std_err: *mut f64,
) -> DeqcdStatus {
    guard(|| {
        let t = borrow(traces, "traces")?;
        let far_slot = out(out_far, "out_far")?;
        let se_slot = out(out_std_err, "out_std_err")?;
        let far = estimate_far(&t.0)?;
        *far_slot = far.value;
        *se_slot = far.std_err;
        Ok(())
    })
}

/// # Safety
/// `traces` must come from [`deqcd_run_batch`] and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn deqcd_traces_free(traces: *mut DeqcdTraces) {
    if !traces.is_null() {
        drop(Box::from_raw(traces));
    }
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to `len`).
/// Returns the full message length, or 0 when there is none.
///
/// # Safety
/// `buf` must hold `len` writable bytes, or be NULL with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn deqcd_copy_last_error(buf: *mut c_char, len: usize) -> usize {
    let msg = deqcd_last_error_message();
    if msg.is_null() {
        return 0;
    }
    let bytes = CStr::from_ptr(msg).to_bytes();
    if !buf.is_null() && len > 0 {
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len()
}
