//! Subcommand bodies: each turns a validated [`Experiment`] into CSV rows.

use log::{info, warn};

use crate::config::{Experiment, MuSource, ThresholdSpec};
use crate::error::{bail, Result};
use crate::estimate::Estimate;
use crate::fusion::{
    calibrate_threshold_mc, default_calibration_cap, threshold_for_far, Calibration, FusionPolicy,
    FusionRule,
};
use crate::metrics::{default_gamma_grid, estimate_cadd, evaluate_policy, pdc_bound_hinf};
use crate::model::{lower_bound_delay, ChangePoint, Scenario};
use crate::report::{Row, RowContext, SensorKey};
use crate::sim::{paired_paths, PathPoint};

/// How the fusion threshold of a policy was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    Explicit,
    Formula,
    Calibrated(Calibration),
}

impl ThresholdSource {
    /// Metric name of the threshold row.
    pub fn metric(&self) -> &'static str {
        match self {
            ThresholdSource::Explicit => "threshold_explicit",
            ThresholdSource::Formula => "threshold_formula",
            ThresholdSource::Calibrated(_) => "threshold_calibrated",
        }
    }
}

/// Threshold for `rule` on `scenario` at FAR target `alpha`, from the
/// closed-form rule or by Monte Carlo calibration on pre-change runs.
pub fn resolve_threshold(
    exp: &Experiment,
    scenario: &Scenario,
    rule: FusionRule,
    alpha: f64,
    formula_only: bool,
) -> Result<(f64, ThresholdSource)> {
    let formula = threshold_for_far(rule, alpha, scenario.len())?;
    if formula_only {
        return Ok((formula, ThresholdSource::Formula));
    }
    let pre = scenario.with_change_point(ChangePoint::Never)?;
    let policy = FusionPolicy::new(rule, formula)?;
    let cap = exp.execution.cap.min(default_calibration_cap(alpha));
    let cal = calibrate_threshold_mc(
        &pre,
        &policy,
        alpha,
        exp.execution.calibration_runs,
        cap,
        exp.execution.seed,
    )?;
    info!(
        "{}: calibrated A = {} (formula {formula}), FAR {} +- {}, {} bisection steps",
        rule.label(),
        cal.threshold,
        cal.far.value,
        cal.far.half_width(),
        cal.iterations
    );
    if cal.censored_fraction > 0.0 {
        warn!(
            "{}: {:.3}% of calibration runs hit the cap",
            rule.label(),
            100.0 * cal.censored_fraction
        );
    }
    Ok((cal.threshold, ThresholdSource::Calibrated(cal)))
}

fn context(
    exp: &Experiment,
    rule: FusionRule,
    scenario: &Scenario,
    alpha: Option<f64>,
    a: f64,
) -> RowContext {
    RowContext {
        experiment: exp.name.clone(),
        policy: rule.label().to_string(),
        l: scenario.len(),
        m: scenario.affected().len(),
        alpha,
        a,
        runs: exp.execution.runs,
        seed: exp.execution.seed,
    }
}

fn require_affected(scenario: &Scenario) -> Result<()> {
    if scenario.affected().is_empty() {
        bail!(
            Config,
            "delay metrics need a nonempty affected set (scenario.m or scenario.affected)"
        );
    }
    Ok(())
}

/// Every metric of the configured policy: FAR, CADD, WADD surrogate, per-sensor
/// PDC and PTC, plus the resolved threshold and sleep credits.
pub fn cmd_metrics(exp: &Experiment, formula_only: bool) -> Result<Vec<Row>> {
    let scenario = &exp.scenario;
    require_affected(scenario)?;
    let ex = &exp.execution;
    let (a, source) = match exp.threshold {
        ThresholdSpec::Explicit(a) => (a, ThresholdSource::Explicit),
        ThresholdSpec::Alpha(alpha) => {
            resolve_threshold(exp, scenario, exp.rule, alpha, formula_only)?
        }
    };
    let policy = FusionPolicy::new(exp.rule, a)?;
    policy.validate_for(scenario)?;
    let ctx = context(exp, exp.rule, scenario, exp.alpha(), a);
    let mut rows = vec![ctx.row(source.metric(), SensorKey::All, Estimate::exact(a))];
    if let ThresholdSource::Calibrated(cal) = &source {
        rows.push(ctx.row("calibration_far", SensorKey::All, cal.far));
    }
    for (i, (s, src)) in scenario.sensors().iter().zip(&exp.mu_sources).enumerate() {
        let name = match src {
            MuSource::Explicit => "mu_explicit",
            MuSource::FromBeta(_) => "mu_from_beta",
        };
        rows.push(ctx.row(name, SensorKey::Sensor(i), Estimate::exact(s.mu())));
    }

    let grid = default_gamma_grid(scenario, ex.seed)?;
    let report = evaluate_policy(scenario, &policy, &grid, ex.runs, ex.cap, ex.seed)?;
    rows.push(ctx.row("far", SensorKey::All, report.far));
    rows.push(ctx.row("cadd", SensorKey::All, report.cadd.value));
    rows.push(ctx.row(
        "cadd_gamma",
        SensorKey::All,
        Estimate::exact(report.cadd.gamma as f64),
    ));
    rows.push(ctx.row(
        "censored_fraction",
        SensorKey::All,
        Estimate::exact(report.censored_fraction),
    ));
    if let Some(w) = report.wadd_surrogate {
        rows.push(ctx.row("wadd_surrogate", SensorKey::All, w));
    }
    if let Some(alpha) = exp.alpha() {
        rows.push(ctx.row(
            "cadd_lower_bound",
            SensorKey::All,
            Estimate::exact(lower_bound_delay(scenario, alpha)?),
        ));
    }
    for (i, (pdc, ptc)) in report.pdc.iter().zip(&report.ptc).enumerate() {
        rows.push(ctx.row("pdc", SensorKey::Sensor(i), *pdc));
        rows.push(ctx.row("ptc", SensorKey::Sensor(i), *ptc));
        if let MuSource::FromBeta(beta) = exp.mu_sources[i] {
            if pdc.value > beta + 3.0 * pdc.std_err {
                warn!("sensor {}: PDC {} exceeds target {beta}", i + 1, pdc.value);
            }
        }
        if let Some(sigma) = exp.sigma[i] {
            if ptc.value > sigma + 3.0 * ptc.std_err {
                warn!("sensor {}: PTC {} exceeds target {sigma}", i + 1, ptc.value);
            }
        }
    }
    Ok(rows)
}

/// CADD of DE-Censor-Max, DE-Censor-Sum and the Oracle CuSum against the
/// number of affected sensors, each at the configured FAR target.
pub fn cmd_sweep_m(exp: &Experiment, m_values: &[usize], formula_only: bool) -> Result<Vec<Row>> {
    let Some(alpha) = exp.alpha() else {
        bail!(
            Config,
            "sweep-m compares at matched FAR and needs policy.alpha"
        );
    };
    if m_values.is_empty() {
        bail!(Config, "sweep-m needs sweep.m_values");
    }
    if !exp.scenario.is_exchangeable() {
        bail!(Config, "sweep-m needs identical sensors");
    }
    let scenarios = m_values
        .iter()
        .map(|&m| exp.scenario_with_m(m))
        .collect::<Result<Vec<_>>>()?;
    let ex = &exp.execution;
    let grid = default_gamma_grid(&exp.scenario, ex.seed)?;
    // the pre-change law of DE-Censor rules does not depend on the affected set
    let shared: Vec<(FusionRule, f64)> = [FusionRule::Max, FusionRule::Sum]
        .into_iter()
        .map(|rule| {
            resolve_threshold(exp, &scenarios[0], rule, alpha, formula_only).map(|(a, _)| (rule, a))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for scenario in &scenarios {
        let (oracle_a, _) =
            resolve_threshold(exp, scenario, FusionRule::OracleCusum, alpha, formula_only)?;
        for &(rule, a) in shared
            .iter()
            .chain([(FusionRule::OracleCusum, oracle_a)].iter())
        {
            let policy = FusionPolicy::new(rule, a)?;
            let cadd = estimate_cadd(scenario, &policy, &grid, ex.runs, ex.cap, ex.seed)?;
            info!(
                "m = {}, {}: CADD {} +- {}",
                scenario.affected().len(),
                rule.label(),
                cadd.value.value,
                cadd.value.half_width()
            );
            rows.push(context(exp, rule, scenario, Some(alpha), a).row(
                "cadd",
                SensorKey::All,
                cadd.value,
            ));
        }
    }
    Ok(rows)
}

/// Calibrated and formula thresholds of the configured rule.
pub fn cmd_calibrate(exp: &Experiment) -> Result<Vec<Row>> {
    let Some(alpha) = exp.alpha() else {
        bail!(Config, "calibrate needs policy.alpha");
    };
    let scenario = &exp.scenario;
    let (a, source) = resolve_threshold(exp, scenario, exp.rule, alpha, false)?;
    let ThresholdSource::Calibrated(cal) = source else {
        unreachable!("calibration requested")
    };
    let formula = threshold_for_far(exp.rule, alpha, scenario.len())?;
    let mut ctx = context(exp, exp.rule, scenario, Some(alpha), a);
    ctx.runs = exp.execution.calibration_runs;
    Ok(vec![
        ctx.row("threshold_calibrated", SensorKey::All, Estimate::exact(a)),
        ctx.row(
            "threshold_formula",
            SensorKey::All,
            Estimate::exact(formula),
        ),
        ctx.row("far", SensorKey::All, cal.far),
        ctx.row(
            "censored_fraction",
            SensorKey::All,
            Estimate::exact(cal.censored_fraction),
        ),
        ctx.row(
            "calibration_iterations",
            SensorKey::All,
            Estimate::exact(cal.iterations as f64),
        ),
    ])
}

/// Coin-flip probability of the fractional baseline: the configured one, or
/// the smallest duty-cycle bound among the DE-CuSum sensors.
pub fn fractional_probability(exp: &Experiment) -> f64 {
    match exp.rule {
        FusionRule::FractionalSum { sampling_prob } => sampling_prob,
        _ => exp
            .scenario
            .sensors()
            .iter()
            .map(pdc_bound_hinf)
            .fold(1.0, f64::min),
    }
}

/// DE-Censor-Sum against fractional sampling at each FAR target of `alphas`.
pub fn cmd_compare_fractional(
    exp: &Experiment,
    alphas: &[f64],
    formula_only: bool,
) -> Result<Vec<Row>> {
    let scenario = &exp.scenario;
    require_affected(scenario)?;
    if alphas.is_empty() {
        bail!(
            Config,
            "compare-fractional needs sweep.alphas or policy.alpha"
        );
    }
    let p = fractional_probability(exp);
    let rules = [
        FusionRule::Sum,
        FusionRule::FractionalSum { sampling_prob: p },
    ];
    let ex = &exp.execution;
    let grid = default_gamma_grid(scenario, ex.seed)?;
    let mut rows = Vec::new();
    for &alpha in alphas {
        for rule in rules {
            let (a, source) = resolve_threshold(exp, scenario, rule, alpha, formula_only)?;
            let policy = FusionPolicy::new(rule, a)?;
            let cadd = estimate_cadd(scenario, &policy, &grid, ex.runs, ex.cap, ex.seed)?;
            let ctx = context(exp, rule, scenario, Some(alpha), a);
            rows.push(ctx.row("cadd", SensorKey::All, cadd.value));
            if let ThresholdSource::Calibrated(cal) = source {
                rows.push(ctx.row("far", SensorKey::All, cal.far));
            }
        }
    }
    Ok(rows)
}

/// Paired CuSum / DE-CuSum path of the first sensor.
pub fn cmd_trace(exp: &Experiment, slots: u64) -> Vec<PathPoint> {
    let change = if exp.scenario.is_affected(0) {
        exp.scenario.change_point()
    } else {
        ChangePoint::Never
    };
    paired_paths(
        &exp.scenario.sensors()[0],
        change,
        slots,
        exp.execution.seed,
    )
}
