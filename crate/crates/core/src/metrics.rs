//! Estimators and closed forms for FAR, CADD, the WADD surrogate, and the
//! per-sensor duty cycle (PDC) and transmission cost (PTC).
//!
//! Every interval reported here is a 95% normal-approximation interval
//! (`Estimate::half_width`); FAR uses the delta method around `1/mean(tau)`.

use log::warn;

use crate::detector::{decusum_should_sample, DetectorState};
use crate::error::{bail, Error, Result};
use crate::estimate::Estimate;
use crate::fusion::FusionPolicy;
use crate::model::{ChangePoint, Scenario, SensorModel};
use crate::sim::{run_batch, sensor_rng, RunConfig, RunTrace};

/// Steps after which a ladder cycle is abandoned as non-terminating.
const CYCLE_STEP_CAP: u64 = 1_000_000;

/// `1 / mean(stop_slot)` over pre-change traces.
///
/// Censored runs count at the cap, so the estimate is biased downward.
pub fn estimate_far(traces: &[RunTrace]) -> Result<Estimate> {
    if traces.is_empty() {
        bail!(Domain, "FAR needs at least one trace");
    }
    if traces.iter().any(|t| t.change_point != ChangePoint::Never) {
        bail!(Domain, "FAR needs pre-change traces (change point = never)");
    }
    let mean =
        Estimate::mean_of(traces.iter().map(|t| t.stop_slot as f64)).expect("nonempty trace list");
    let far = 1.0 / mean.value;
    Ok(Estimate::new(far, mean.std_err * far * far))
}

/// Delay estimate at one change point of the CADD grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPoint {
    pub gamma: u64,
    /// `E[tau - gamma | tau >= gamma]`; `None` when every run stopped early.
    pub delay: Option<Estimate>,
    /// Fraction of runs that alarmed before `gamma` and were discarded.
    pub discarded_fraction: f64,
    /// Fraction of runs truncated at the cap.
    pub censored_fraction: f64,
}

/// CADD as the maximum over a grid of change points.
#[derive(Debug, Clone, PartialEq)]
pub struct CaddEstimate {
    pub value: Estimate,
    /// Grid point attaining the maximum.
    pub gamma: u64,
    pub points: Vec<GammaPoint>,
}

/// Estimates `E_gamma[tau - gamma | tau >= gamma]` for each grid point and
/// returns the largest.
///
/// Every grid point reuses the same run seeds. Censored runs contribute
/// `cap - gamma`, a lower bound on their delay.
pub fn estimate_cadd(
    scenario: &Scenario,
    policy: &FusionPolicy,
    gamma_grid: &[u64],
    runs: usize,
    cap: u64,
    seed: u64,
) -> Result<CaddEstimate> {
    if gamma_grid.is_empty() {
        bail!(Domain, "CADD grid is empty");
    }
    let mut points = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        if gamma == 0 || gamma > cap {
            bail!(Domain, "grid point {gamma} outside [1, cap = {cap}]");
        }
        let cfg = RunConfig::new(
            scenario.with_change_point(ChangePoint::At(gamma))?,
            *policy,
            cap,
            seed,
        )?;
        points.push(gamma_point(gamma, &run_batch(&cfg, runs)?));
    }
    let best = points
        .iter()
        .filter_map(|p| p.delay.map(|d| (p.gamma, d)))
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value));
    match best {
        Some((gamma, value)) => Ok(CaddEstimate {
            value,
            gamma,
            points,
        }),
        None => Err(Error::Estimation(
            "every run alarmed before its change point at every grid point".into(),
        )),
    }
}

/// Delay summary of traces that share one change point.
pub fn gamma_point(gamma: u64, traces: &[RunTrace]) -> GammaPoint {
    let delays: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.delay())
        .map(|d| d as f64)
        .collect();
    let n = traces.len().max(1) as f64;
    if delays.len() < traces.len() {
        warn!(
            "gamma = {gamma}: {} of {} runs alarmed before the change and were discarded",
            traces.len() - delays.len(),
            traces.len()
        );
    }
    GammaPoint {
        gamma,
        delay: Estimate::mean_of(delays.iter().copied()),
        discarded_fraction: (traces.len() - delays.len()) as f64 / n,
        censored_fraction: traces.iter().filter(|t| t.censored).count() as f64 / n,
    }
}

/// Grid `{1, stationary}` where the stationary point lets the pre-change
/// statistics burn in for ten times the longest mean renewal cycle.
pub fn default_gamma_grid(scenario: &Scenario, seed: u64) -> Result<Vec<u64>> {
    let mut longest: f64 = 1.0;
    for model in scenario.sensors() {
        let rq = renewal_quantities_mc(model, 2000, seed)?.quantities;
        longest = longest.max(rq.mean_ladder_epoch + rq.mean_sleep_slots);
    }
    let stationary = 1 + (10.0 * longest).ceil() as u64;
    Ok(vec![1, stationary])
}

/// Mean delay with change at slot 1 and every DE-CuSum sensor starting at
/// `w = -h` (deepest sleep).
///
/// This is an upper-bounding surrogate for WADD built from the worst wake-up
/// state, not the essential supremum over histories. Refused when an
/// affected sensor has infinite `h`.
pub fn estimate_wadd_surrogate(
    scenario: &Scenario,
    policy: &FusionPolicy,
    runs: usize,
    cap: u64,
    seed: u64,
) -> Result<Estimate> {
    if let Some(&k) = scenario
        .affected()
        .iter()
        .find(|&&k| !scenario.sensors()[k].h().is_finite())
    {
        bail!(
            Domain,
            "WADD surrogate needs finite h; affected sensor {k} has h = inf"
        );
    }
    let start: Vec<f64> = scenario
        .sensors()
        .iter()
        .map(|s| if s.h().is_finite() { 0.0 - s.h() } else { 0.0 })
        .collect();
    let cfg = RunConfig::new(
        scenario.with_change_point(ChangePoint::At(1))?,
        *policy,
        cap,
        seed,
    )?
    .with_initial_states(start)?;
    let traces = run_batch(&cfg, runs)?;
    gamma_point(1, &traces)
        .delay
        .ok_or_else(|| Error::Estimation("no delays recorded".into()))
}

/// Means over pre-change ladder cycles of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalQuantities {
    /// `E[tau_-]`, steps until the LLR walk first goes negative.
    pub mean_ladder_epoch: f64,
    /// `E[ceil(|max(W_{tau_-}, -h)| / mu)]`, slots slept after the cycle.
    pub mean_sleep_slots: f64,
    /// `E[U_D]`, steps with the walk above `D` before `tau_-`.
    pub mean_exceed_count: f64,
}

/// Monte Carlo renewal quantities with delta-method PDC/PTC errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalMc {
    pub quantities: RenewalQuantities,
    pub pdc: Estimate,
    pub ptc: Estimate,
    pub cycles: usize,
    /// Cycles abandoned at the step cap.
    pub discarded: usize,
}

/// Simulates `runs` i.i.d. pre-change ladder cycles of the LLR walk.
pub fn renewal_quantities_mc(model: &SensorModel, runs: usize, seed: u64) -> Result<RenewalMc> {
    if runs < 100 {
        bail!(
            Domain,
            "renewal estimate needs at least 100 cycles, got {runs}"
        );
    }
    let mut rng = sensor_rng(seed, 0);
    let d = model.d_local();
    let mut pdc_pairs = Vec::with_capacity(runs);
    let mut ptc_pairs = Vec::with_capacity(runs);
    let (mut sum_epoch, mut sum_sleep, mut sum_exceed) = (0.0, 0.0, 0.0);
    let mut discarded = 0;
    for _ in 0..runs {
        let mut walk = 0.0f64;
        let mut steps = 0u64;
        let mut exceed = 0u64;
        loop {
            steps += 1;
            walk += model.draw(false, &mut rng).llr;
            if walk < 0.0 || steps >= CYCLE_STEP_CAP {
                break;
            }
            if walk > d {
                exceed += 1;
            }
        }
        if walk >= 0.0 {
            discarded += 1;
            continue;
        }
        let sleep = sleep_slots(walk.max(-model.h()), model.mu());
        let cycle = steps as f64 + sleep;
        sum_epoch += steps as f64;
        sum_sleep += sleep;
        sum_exceed += exceed as f64;
        pdc_pairs.push((steps as f64, cycle));
        ptc_pairs.push((exceed as f64, cycle));
    }
    if discarded > 0 {
        warn!("{discarded} ladder cycles did not terminate within {CYCLE_STEP_CAP} steps; check the model's pre-change drift");
    }
    let kept = pdc_pairs.len();
    if kept == 0 {
        bail!(Estimation, "no ladder cycle terminated");
    }
    let n = kept as f64;
    Ok(RenewalMc {
        quantities: RenewalQuantities {
            mean_ladder_epoch: sum_epoch / n,
            mean_sleep_slots: sum_sleep / n,
            mean_exceed_count: sum_exceed / n,
        },
        pdc: Estimate::ratio_of(&pdc_pairs).expect("positive cycle lengths"),
        ptc: Estimate::ratio_of(&ptc_pairs).expect("positive cycle lengths"),
        cycles: kept,
        discarded,
    })
}

/// Skipped slots from `w < 0` back to zero, by the detector's own update;
/// `ceil(|w| / mu)` up to the reset slack.
fn sleep_slots(w: f64, mu: f64) -> f64 {
    let mut state = DetectorState::starting_at(w);
    let mut slots = 0u64;
    while !decusum_should_sample(&state) {
        state = state.skipped(mu);
        slots += 1;
    }
    slots as f64
}

/// Renewal-reward PDC and PTC:
/// `E[tau_-] / (E[tau_-] + E[sleep])` and `E[U_D] / (E[tau_-] + E[sleep])`.
pub fn pdc_ptc_closed_form(_model: &SensorModel, rq: &RenewalQuantities) -> (f64, f64) {
    let cycle = rq.mean_ladder_epoch + rq.mean_sleep_slots;
    (rq.mean_ladder_epoch / cycle, rq.mean_exceed_count / cycle)
}

/// `mu / (mu + D(f0 || f1))`, the PDC bound for `h = inf`.
pub fn pdc_bound_hinf(model: &SensorModel) -> f64 {
    model.mu() / (model.mu() + model.kl_pre_post())
}

/// Sleep credit that makes [`pdc_bound_hinf`] equal `beta`: `beta * KL / (1 - beta)`.
pub fn mu_for_pdc_target(beta: f64, kl_pre_post: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        bail!(Config, "PDC target beta must lie in (0, 1), got {beta}");
    }
    Ok(beta * kl_pre_post / (1.0 - beta))
}

/// Long-run per-sensor `(PDC, PTC)` pooled over the pre-change slots of all traces.
pub fn estimate_pdc_ptc_direct(traces: &[RunTrace]) -> Result<Vec<(Estimate, Estimate)>> {
    let Some(first) = traces.first() else {
        bail!(Domain, "PDC/PTC need at least one trace");
    };
    let total: u64 = traces.iter().map(|t| t.pre_change_slots()).sum();
    if total == 0 {
        bail!(Domain, "traces contain no pre-change slots");
    }
    let sensors = first.sensors.len();
    Ok((0..sensors)
        .map(|l| {
            let mut samples = Vec::with_capacity(traces.len());
            let mut transmissions = Vec::with_capacity(traces.len());
            for t in traces {
                let slots = t.pre_change_slots() as f64;
                samples.push((t.sensors[l].samples_pre as f64, slots));
                transmissions.push((t.sensors[l].transmissions_pre as f64, slots));
            }
            (
                Estimate::ratio_of(&samples).expect("nonzero slots"),
                Estimate::ratio_of(&transmissions).expect("nonzero slots"),
            )
        })
        .collect())
}

/// Every metric of one policy on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub far: Estimate,
    pub cadd: CaddEstimate,
    pub wadd_surrogate: Option<Estimate>,
    pub pdc: Vec<Estimate>,
    pub ptc: Vec<Estimate>,
    /// Fraction of pre-change (FAR) runs truncated at the cap.
    pub censored_fraction: f64,
}

impl MetricsReport {
    /// Rates lie in `[0, 1]` and delays are nonnegative.
    pub fn check(&self) -> Result<()> {
        let rate_ok = |e: &Estimate| (0.0..=1.0).contains(&e.value);
        if !rate_ok(&self.far) || !(0.0..=1.0).contains(&self.censored_fraction) {
            bail!(Estimation, "rate outside [0, 1]");
        }
        if !self.pdc.iter().chain(&self.ptc).all(rate_ok) {
            bail!(Estimation, "PDC/PTC outside [0, 1]");
        }
        if self.cadd.value.value < 0.0 || self.wadd_surrogate.is_some_and(|w| w.value < 0.0) {
            bail!(Estimation, "negative delay");
        }
        Ok(())
    }
}

/// Runs every estimator for one policy.
///
/// FAR, PDC and PTC come from one pre-change batch; CADD from `gamma_grid`;
/// the WADD surrogate only when all affected sensors have finite `h`.
pub fn evaluate_policy(
    scenario: &Scenario,
    policy: &FusionPolicy,
    gamma_grid: &[u64],
    runs: usize,
    cap: u64,
    seed: u64,
) -> Result<MetricsReport> {
    let pre_cfg = RunConfig::new(
        scenario.with_change_point(ChangePoint::Never)?,
        *policy,
        cap,
        seed,
    )?;
    let pre = run_batch(&pre_cfg, runs)?;
    let far = estimate_far(&pre)?;
    let (pdc, ptc) = estimate_pdc_ptc_direct(&pre)?.into_iter().unzip();
    let censored_fraction = pre.iter().filter(|t| t.censored).count() as f64 / runs as f64;
    let cadd = estimate_cadd(scenario, policy, gamma_grid, runs, cap, seed)?;
    let finite_h = scenario
        .affected()
        .iter()
        .all(|&k| scenario.sensors()[k].h().is_finite());
    let wadd_surrogate = if finite_h && !scenario.affected().is_empty() {
        Some(estimate_wadd_surrogate(scenario, policy, runs, cap, seed)?)
    } else {
        None
    };
    let report = MetricsReport {
        far,
        cadd,
        wadd_surrogate,
        pdc,
        ptc,
        censored_fraction,
    };
    report.check()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Density;
    use crate::sim::SensorCounters;
    use approx::assert_relative_eq;

    fn trace(stop: u64, change: ChangePoint) -> RunTrace {
        RunTrace {
            stop_slot: stop,
            censored: false,
            change_point: change,
            seed: 0,
            sensors: vec![SensorCounters {
                samples_pre: stop / 2,
                ..Default::default()
            }],
        }
    }

    fn gaussian(theta: f64, mu: f64, h: f64, d: f64) -> SensorModel {
        SensorModel::new(
            Density::gaussian(0.0, 1.0).unwrap(),
            Density::gaussian(theta, 1.0).unwrap(),
            mu,
            h,
            d,
        )
        .unwrap()
    }

    #[test]
    fn far_of_constant_traces() {
        let traces = vec![trace(1000, ChangePoint::Never); 10];
        let far = estimate_far(&traces).unwrap();
        assert_eq!(far.value, 0.001);
        assert_eq!(far.std_err, 0.0);
        assert!(estimate_far(&[]).is_err());
        assert!(estimate_far(&[trace(10, ChangePoint::At(3))]).is_err());
    }

    #[test]
    fn closed_form_arithmetic() {
        let m = gaussian(0.5, 0.1, 1.0, 0.0);
        let rq = RenewalQuantities {
            mean_ladder_epoch: 2.0,
            mean_sleep_slots: 2.0,
            mean_exceed_count: 1.0,
        };
        assert_eq!(pdc_ptc_closed_form(&m, &rq), (0.5, 0.25));
    }

    #[test]
    fn hinf_bound_examples() {
        let m = gaussian(0.5, 0.125, f64::INFINITY, 0.0);
        assert_relative_eq!(pdc_bound_hinf(&m), 0.5, epsilon = 1e-15);
        let mu = mu_for_pdc_target(0.5, 0.02).unwrap();
        assert_relative_eq!(mu, 0.02, epsilon = 1e-15);
        let tiny = gaussian(0.5, 1e-12, f64::INFINITY, 0.0);
        assert!(pdc_bound_hinf(&tiny) < 1e-10);
        assert!(mu_for_pdc_target(0.0, 0.1).is_err());
        assert!(mu_for_pdc_target(1.0, 0.1).is_err());
    }

    #[test]
    fn renewal_edge_cases() {
        let never = gaussian(0.5, 0.1, 2.0, f64::INFINITY);
        let rq = renewal_quantities_mc(&never, 500, 1).unwrap();
        assert_eq!(rq.quantities.mean_exceed_count, 0.0);
        let no_clamp = gaussian(0.5, 0.1, 0.0, 0.0);
        let rq = renewal_quantities_mc(&no_clamp, 500, 1).unwrap();
        assert_eq!(rq.quantities.mean_sleep_slots, 0.0);
        assert_eq!(pdc_ptc_closed_form(&no_clamp, &rq.quantities).0, 1.0);
        assert!(rq.quantities.mean_ladder_epoch >= 1.0);
        assert!(renewal_quantities_mc(&no_clamp, 10, 1).is_err());
    }

    #[test]
    fn direct_pdc_pooled() {
        let traces = vec![trace(10, ChangePoint::Never), trace(30, ChangePoint::Never)];
        let est = estimate_pdc_ptc_direct(&traces).unwrap();
        assert_relative_eq!(est[0].0.value, 20.0 / 40.0);
        assert_eq!(est[0].1.value, 0.0);
        let empty = vec![trace(5, ChangePoint::At(1))];
        assert!(estimate_pdc_ptc_direct(&empty).is_err());
    }

    #[test]
    fn gamma_point_discards_early_alarms() {
        let traces = vec![trace(3, ChangePoint::At(5)), trace(9, ChangePoint::At(5))];
        let p = gamma_point(5, &traces);
        assert_eq!(p.delay.unwrap().value, 4.0);
        assert_eq!(p.discarded_fraction, 0.5);
    }

    #[test]
    fn wadd_refuses_infinite_h() {
        let s = Scenario::identical(
            gaussian(0.5, 0.1, f64::INFINITY, 0.0),
            2,
            vec![0],
            ChangePoint::At(1),
        )
        .unwrap();
        let p = FusionPolicy::new(crate::fusion::FusionRule::Max, 3.0).unwrap();
        assert!(matches!(
            estimate_wadd_surrogate(&s, &p, 10, 100, 1),
            Err(Error::Domain(_))
        ));
    }
}
