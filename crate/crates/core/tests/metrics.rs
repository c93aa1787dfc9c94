mod common;

use approx::assert_abs_diff_eq;

use common::{bernoulli, gaussian, log4};
use deqcd::fusion::{FusionPolicy, FusionRule};
use deqcd::lattice::{exact_far, lattice_build};
use deqcd::metrics::{
    default_gamma_grid, estimate_cadd, estimate_far, estimate_pdc_ptc_direct,
    estimate_wadd_surrogate, evaluate_policy, mu_for_pdc_target, pdc_bound_hinf,
    pdc_ptc_closed_form, renewal_quantities_mc,
};
use deqcd::model::{ChangePoint, Scenario};
use deqcd::sim::{run_batch, run_once, run_seed, RunConfig};

fn policy(rule: FusionRule, a: f64) -> FusionPolicy {
    FusionPolicy::new(rule, a).unwrap()
}

#[test]
fn far_matches_lattice_for_a_discrete_sensor() {
    let model = bernoulli(0.2, 0.8, 0.5, 2.0, 0.0);
    let a = 4.25 * log4();
    let exact = exact_far(&lattice_build(&model, a).unwrap()).unwrap();
    let scenario = Scenario::identical(model, 1, vec![], ChangePoint::Never).unwrap();
    let traces = run_batch(
        &RunConfig::new(scenario, policy(FusionRule::Sum, a), 10_000_000, 8).unwrap(),
        4000,
    )
    .unwrap();
    let far = estimate_far(&traces).unwrap();
    assert!(
        (far.value - exact).abs() <= 3.0 * far.std_err,
        "{far:?} vs {exact}"
    );
}

#[test]
fn far_needs_pre_change_traces() {
    let s =
        Scenario::identical(gaussian(0.5, 0.1, 2.0, 0.0), 1, vec![0], ChangePoint::At(3)).unwrap();
    let t = run_batch(
        &RunConfig::new(s, policy(FusionRule::Sum, 2.0), 1000, 1).unwrap(),
        5,
    )
    .unwrap();
    assert!(estimate_far(&t).is_err());
    assert!(estimate_far(&[]).is_err());
}

#[test]
fn sum_far_is_at_most_max_far_at_a_over_l() {
    let s = Scenario::identical(
        gaussian(0.5, 0.125, 6.0, 0.0),
        4,
        vec![],
        ChangePoint::Never,
    )
    .unwrap();
    let a = 12.0;
    let sum = estimate_far(
        &run_batch(
            &RunConfig::new(s.clone(), policy(FusionRule::Sum, a), 1_000_000, 2).unwrap(),
            1000,
        )
        .unwrap(),
    )
    .unwrap();
    let max = estimate_far(
        &run_batch(
            &RunConfig::new(s, policy(FusionRule::Max, a / 4.0), 1_000_000, 2).unwrap(),
            1000,
        )
        .unwrap(),
    )
    .unwrap();
    assert!(sum.value <= max.value, "{sum:?} vs {max:?}");
}

#[test]
fn cadd_at_gamma_one_discards_nothing() {
    let s = Scenario::identical(
        gaussian(0.5, 0.125, 4.0, 0.0),
        3,
        vec![0, 1],
        ChangePoint::At(1),
    )
    .unwrap();
    let c = estimate_cadd(&s, &policy(FusionRule::Sum, 10.0), &[1], 500, 1_000_000, 3).unwrap();
    assert_eq!(c.gamma, 1);
    assert_eq!(c.points[0].discarded_fraction, 0.0);
    assert!(estimate_cadd(&s, &policy(FusionRule::Sum, 10.0), &[], 10, 100, 3).is_err());
    assert!(estimate_cadd(&s, &policy(FusionRule::Sum, 10.0), &[0], 10, 100, 3).is_err());
    let grid = default_gamma_grid(&s, 3).unwrap();
    assert_eq!(grid[0], 1);
    assert!(grid[1] > 1);
}

#[test]
fn wadd_surrogate_with_h_zero_is_cadd_at_gamma_one() {
    let s = Scenario::identical(
        gaussian(0.5, 0.125, 0.0, 0.0),
        3,
        vec![0, 2],
        ChangePoint::At(1),
    )
    .unwrap();
    let p = policy(FusionRule::Max, 5.0);
    let w = estimate_wadd_surrogate(&s, &p, 800, 1_000_000, 6).unwrap();
    let c = estimate_cadd(&s, &p, &[1], 800, 1_000_000, 6).unwrap();
    assert_eq!(w, c.value);
}

#[test]
fn wadd_surrogate_bounds() {
    let model = gaussian(0.5, 0.25, 5.0, 0.0);
    let bound = (model.h() / model.mu()).ceil();
    let s = Scenario::identical(model, 3, vec![0, 1], ChangePoint::At(1)).unwrap();
    for rule in [FusionRule::Max, FusionRule::Sum] {
        let p = policy(rule, 9.0);
        let w = estimate_wadd_surrogate(&s, &p, 3000, 1_000_000, 12).unwrap();
        let c = estimate_cadd(&s, &p, &[1], 3000, 1_000_000, 12)
            .unwrap()
            .value;
        assert!(w.value >= c.value, "{rule}: {w:?} < {c:?}");
        assert!(
            w.value - c.value <= bound + 3.0 * w.pooled_std_err(&c),
            "{rule}: {w:?} vs {c:?}"
        );
    }
    let inf = Scenario::identical(
        gaussian(0.5, 0.25, f64::INFINITY, 0.0),
        2,
        vec![0],
        ChangePoint::At(1),
    )
    .unwrap();
    assert!(estimate_wadd_surrogate(&inf, &policy(FusionRule::Sum, 5.0), 10, 100, 1).is_err());
}

#[test]
fn cadd_does_not_exceed_wadd_surrogate() {
    let s = Scenario::identical(
        gaussian(0.5, 0.125, 10.0, 0.0),
        4,
        vec![0, 1, 2],
        ChangePoint::At(1),
    )
    .unwrap();
    let grid = default_gamma_grid(&s, 1).unwrap();
    for rule in [FusionRule::Max, FusionRule::Sum] {
        let r = evaluate_policy(&s, &policy(rule, 8.0), &grid, 1000, 200_000, 1).unwrap();
        let w = r.wadd_surrogate.unwrap();
        assert!(
            r.cadd.value.value <= w.value + 3.0 * w.pooled_std_err(&r.cadd.value),
            "{rule}: {r:?}"
        );
        r.check().unwrap();
    }
}

#[test]
fn duty_cycle_bound_examples() {
    let m = gaussian(0.5, 0.125, 10.0, 0.0);
    assert_abs_diff_eq!(pdc_bound_hinf(&m), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(mu_for_pdc_target(0.5, 0.02).unwrap(), 0.02, epsilon = 1e-15);
    assert!(pdc_bound_hinf(&gaussian(0.5, 1e-12, 10.0, 0.0)) < 1e-10);
    assert!(mu_for_pdc_target(0.0, 0.02).is_err());
    assert!(mu_for_pdc_target(1.0, 0.02).is_err());
}

#[test]
fn hinf_bound_covers_large_h() {
    for theta in [0.5, 1.0] {
        let model = gaussian(
            theta,
            mu_for_pdc_target(0.5, theta * theta / 2.0).unwrap(),
            25.0,
            0.0,
        );
        let s = Scenario::identical(model.clone(), 1, vec![], ChangePoint::Never).unwrap();
        let traces = run_batch(
            &RunConfig::new(s, policy(FusionRule::Sum, f64::INFINITY), 20_000, 3).unwrap(),
            500,
        )
        .unwrap();
        let (pdc, _) = estimate_pdc_ptc_direct(&traces).unwrap()[0];
        assert!(
            pdc.value <= pdc_bound_hinf(&model) + 3.0 * pdc.std_err,
            "{pdc:?}"
        );
    }
}

#[test]
fn closed_form_matches_direct_estimate() {
    for model in [
        gaussian(0.5, 0.125, 10.0, 0.0),
        bernoulli(0.3, 0.7, 0.5, 3.0, 1.0),
    ] {
        let mc = renewal_quantities_mc(&model, 20_000, 7).unwrap();
        let (pdc, ptc) = pdc_ptc_closed_form(&model, &mc.quantities);
        assert_eq!((pdc, ptc), (mc.pdc.value, mc.ptc.value));
        let s = Scenario::identical(model, 1, vec![], ChangePoint::Never).unwrap();
        let traces = run_batch(
            &RunConfig::new(s, policy(FusionRule::Sum, f64::INFINITY), 20_000, 8).unwrap(),
            500,
        )
        .unwrap();
        let (d_pdc, d_ptc) = estimate_pdc_ptc_direct(&traces).unwrap()[0];
        assert!(
            (d_pdc.value - pdc).abs() <= 3.0 * d_pdc.pooled_std_err(&mc.pdc),
            "{d_pdc:?} vs {:?}",
            mc.pdc
        );
        assert!(
            (d_ptc.value - ptc).abs() <= 3.0 * d_ptc.pooled_std_err(&mc.ptc),
            "{d_ptc:?} vs {:?}",
            mc.ptc
        );
    }
    assert!(renewal_quantities_mc(&gaussian(0.5, 0.1, 1.0, 0.0), 99, 1).is_err());
}

#[test]
fn renewal_degenerate_models() {
    let mc = renewal_quantities_mc(&gaussian(0.5, 0.1, 0.0, 0.0), 1000, 1).unwrap();
    assert_eq!(mc.quantities.mean_sleep_slots, 0.0);
    assert_eq!(mc.pdc.value, 1.0);
    let mc = renewal_quantities_mc(&gaussian(0.5, 0.1, 3.0, f64::INFINITY), 1000, 1).unwrap();
    assert_eq!(mc.quantities.mean_exceed_count, 0.0);
    assert!(mc.quantities.mean_ladder_epoch >= 1.0);
}

#[test]
fn duty_cycle_counters_do_not_depend_on_the_threshold() {
    let s = Scenario::identical(
        gaussian(0.5, 0.125, 6.0, 0.3),
        4,
        vec![],
        ChangePoint::Never,
    )
    .unwrap();
    for rule in [FusionRule::Max, FusionRule::Sum] {
        for i in 0..200 {
            let seed = run_seed(40, i);
            let low =
                run_once(&RunConfig::new(s.clone(), policy(rule, 4.0), 1_000_000, seed).unwrap());
            // the high-threshold run, observed up to the low run's alarm
            let high = run_once(
                &RunConfig::new(s.clone(), policy(rule, 9.0), low.stop_slot, seed).unwrap(),
            );
            assert_eq!(low.sensors, high.sensors, "{rule} seed {seed}");
        }
    }
}
