//! Fusion-center stopping rules, FAR threshold formulas, DE-All weights and
//! Monte Carlo threshold calibration.

use std::cell::Cell;
use std::fmt;

use crate::error::{bail, Error, Result};
use crate::estimate::Estimate;
use crate::model::{ChangePoint, Scenario};
use crate::sim::{self, RunConfig};

/// How the fusion center combines uplinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionRule {
    /// DE-Censor-Max: stop when the largest uplink exceeds `A`.
    Max,
    /// DE-Censor-Sum: stop when the sum of uplinks exceeds `A`.
    Sum,
    /// DE-All: stop when every sensor reports `W > d_l * A`.
    All,
    /// Centralized CuSum on the summed LLRs of the affected sensors.
    OracleCusum,
    /// CuSum per sensor, coin-flip sampling, hold-last sum at the fusion center.
    FractionalSum { sampling_prob: f64 },
}

impl FusionRule {
    /// Short policy label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            FusionRule::Max => "dcm",
            FusionRule::Sum => "dcs",
            FusionRule::All => "de_all",
            FusionRule::OracleCusum => "oracle_cusum",
            FusionRule::FractionalSum { .. } => "fractional",
        }
    }

    /// True for the rules that run DE-CuSum at the sensors.
    pub fn uses_decusum(&self) -> bool {
        matches!(self, FusionRule::Max | FusionRule::Sum | FusionRule::All)
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionPolicy {
    pub rule: FusionRule,
    pub threshold_a: f64,
}

impl FusionPolicy {
    /// `threshold_a` may be `+inf` (a run that never alarms, used for long
    /// pre-change horizons).
    pub fn new(rule: FusionRule, threshold_a: f64) -> Result<Self> {
        if !(threshold_a >= 0.0) {
            bail!(
                Config,
                "fusion threshold must be nonnegative, got {threshold_a}"
            );
        }
        if let FusionRule::FractionalSum { sampling_prob } = rule {
            if !(sampling_prob > 0.0 && sampling_prob <= 1.0) {
                bail!(
                    Config,
                    "sampling probability must lie in (0, 1], got {sampling_prob}"
                );
            }
        }
        Ok(FusionPolicy { rule, threshold_a })
    }

    pub fn with_threshold(&self, threshold_a: f64) -> Result<Self> {
        FusionPolicy::new(self.rule, threshold_a)
    }

    /// Checks the policy against a scenario.
    ///
    /// The max rule needs `A >= max_l D_l`; below that the censoring level,
    /// not `A`, decides the alarm.
    pub fn validate_for(&self, scenario: &Scenario) -> Result<()> {
        if self.rule == FusionRule::Max {
            let max_d = scenario
                .sensors()
                .iter()
                .map(|s| s.d_local())
                .fold(0.0, f64::max);
            if self.threshold_a < max_d {
                bail!(
                    Config,
                    "max rule needs A >= max censoring level ({} < {max_d})",
                    self.threshold_a
                );
            }
        }
        if self.rule == FusionRule::OracleCusum && scenario.affected().is_empty() {
            bail!(Config, "oracle CuSum needs a nonempty affected set");
        }
        Ok(())
    }
}

/// Fusion decision for one slot. `Null` uplinks read as zero.
///
/// The sum and fractional rules sum the values, the max and oracle rules take
/// the largest, and the all rule requires every uplink to equal one.
pub fn fusion_decide(policy: &FusionPolicy, uplinks: &[crate::detector::Uplink]) -> bool {
    let a = policy.threshold_a;
    match policy.rule {
        FusionRule::Max | FusionRule::OracleCusum => {
            uplinks
                .iter()
                .map(|u| u.value_or_zero())
                .fold(f64::NEG_INFINITY, f64::max)
                > a
        }
        FusionRule::Sum | FusionRule::FractionalSum { .. } => {
            uplinks.iter().map(|u| u.value_or_zero()).sum::<f64>() > a
        }
        FusionRule::All => !uplinks.is_empty() && uplinks.iter().all(|u| u.value_or_zero() == 1.0),
    }
}

/// Conservative FAR threshold: `log(L/alpha)` for max, `L log(L/alpha)` for sum.
pub fn threshold_for_far(rule: FusionRule, alpha: f64, l: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Domain, "alpha must lie in (0, 1), got {alpha}");
    }
    if l == 0 {
        bail!(Domain, "need at least one sensor");
    }
    let per_sensor = (l as f64 / alpha).ln();
    match rule {
        FusionRule::Max => Ok(per_sensor),
        // {all W > d A} is contained in {sum W > A}, so the sum threshold also bounds DE-All
        FusionRule::Sum | FusionRule::All | FusionRule::FractionalSum { .. } => {
            Ok(l as f64 * per_sensor)
        }
        FusionRule::OracleCusum => Ok(alpha.ln().abs()),
    }
}

/// DE-All split weights `d_l = D(f1l||f0l) / sum_k D(f1k||f0k)`.
pub fn de_all_weights(scenario: &Scenario) -> Vec<f64> {
    let kls: Vec<f64> = scenario.sensors().iter().map(|s| s.kl_post_pre()).collect();
    let total: f64 = kls.iter().sum();
    kls.iter().map(|k| k / total).collect()
}

/// Outcome of [`calibrate_threshold_mc`].
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    /// FAR estimate at `threshold` over all calibration runs.
    pub far: Estimate,
    /// Fraction of calibration runs truncated at the cap.
    pub censored_fraction: f64,
    pub iterations: usize,
}

/// Default truncation cap for calibration: 100 times the mean run length
/// `1/alpha` that the FAR target implies.
pub fn default_calibration_cap(alpha: f64) -> u64 {
    (100.0 / alpha).ceil() as u64
}

const BISECTION_STEPS: usize = 40;

/// Finds the smallest threshold whose estimated FAR is at most `alpha`.
///
/// All candidate thresholds reuse the same run seeds, so the estimated mean
/// run length is a nondecreasing step function of `A` and bisection is
/// deterministic. Runs truncated at `cap` count as `cap`, which biases the
/// estimated FAR downward. The search brackets in `[0, 10 * threshold_for_far]`.
pub fn calibrate_threshold_mc(
    scenario: &Scenario,
    policy: &FusionPolicy,
    alpha: f64,
    runs: usize,
    cap: u64,
    seed: u64,
) -> Result<Calibration> {
    if scenario.change_point() != ChangePoint::Never {
        bail!(
            Calibration,
            "calibration needs a pre-change scenario (change point = never)"
        );
    }
    if runs < 100 {
        bail!(
            Calibration,
            "calibration needs at least 100 runs, got {runs}"
        );
    }
    let formula = threshold_for_far(policy.rule, alpha, scenario.len())?;
    let target_mean = 1.0 / alpha;
    let floor = match policy.rule {
        FusionRule::Max => scenario
            .sensors()
            .iter()
            .map(|s| s.d_local())
            .fold(0.0, f64::max),
        _ => 0.0,
    };
    let iterations = Cell::new(0);
    let feasible = |a: f64| -> Result<bool> {
        iterations.set(iterations.get() + 1);
        let cfg = RunConfig::new(scenario.clone(), policy.with_threshold(a)?, cap, seed)?;
        Ok(sim::mean_stop_reaches(&cfg, runs, target_mean))
    };

    if feasible(floor)? {
        return finish(scenario, policy, floor, runs, cap, seed, iterations.get());
    }
    let mut hi = formula.max(floor);
    if !feasible(hi)? {
        hi = 10.0 * formula;
        if hi <= floor || !feasible(hi)? {
            return Err(Error::Calibration(format!(
                "estimated FAR still above {alpha} at A = {hi}; raise the cap or the run count"
            )));
        }
    }
    let mut lo = floor;
    for _ in 0..BISECTION_STEPS {
        if hi - lo <= 1e-4 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    finish(scenario, policy, hi, runs, cap, seed, iterations.get())
}

fn finish(
    scenario: &Scenario,
    policy: &FusionPolicy,
    threshold: f64,
    runs: usize,
    cap: u64,
    seed: u64,
    iterations: usize,
) -> Result<Calibration> {
    let cfg = RunConfig::new(
        scenario.clone(),
        policy.with_threshold(threshold)?,
        cap,
        seed,
    )?;
    let traces = sim::run_batch(&cfg, runs)?;
    let far = crate::metrics::estimate_far(&traces)?;
    let censored = traces.iter().filter(|t| t.censored).count() as f64 / runs as f64;
    Ok(Calibration {
        threshold,
        far,
        censored_fraction: censored,
        iterations,
    })
}
