mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{bernoulli, gaussian, three_point};
use deqcd::detector::{
    censor, censor_binary, cusum_step, decusum_should_sample, decusum_step, max_consecutive_skips,
    DetectorState, Uplink, RESET_TOL,
};
use deqcd::model::SensorModel;
use deqcd::Error;

#[test]
fn should_sample_examples() {
    assert!(decusum_should_sample(&DetectorState::starting_at(0.0)));
    assert!(!decusum_should_sample(&DetectorState::starting_at(-0.01)));
    assert!(decusum_should_sample(&DetectorState::starting_at(3.2)));
    assert!(decusum_should_sample(&DetectorState::default()));
}

#[test]
fn step_examples() {
    let m = gaussian(0.5, 0.1, 2.0, 0.0);
    let s = decusum_step(&DetectorState::starting_at(-0.05), &m, None).unwrap();
    assert_eq!(s.w, 0.0);
    assert!(!s.took_sample_last);
    assert_eq!(s.slot, 1);

    // LLR(x) = 0.5 x - 0.125, so x = -11.5 gives -5.875 and x = -5.75 gives -3.0
    let s = decusum_step(&DetectorState::starting_at(0.5), &m, Some(-5.75)).unwrap();
    assert_eq!(s.w, -2.0);
    assert!(s.took_sample_last);

    let m = gaussian(0.5, 0.1, 10.0, 0.0);
    let s = decusum_step(&DetectorState::default(), &m, Some(1.0)).unwrap();
    assert_abs_diff_eq!(s.w, 0.375, epsilon = 1e-15);
}

#[test]
fn step_contract_violations() {
    let m = gaussian(0.5, 0.1, 2.0, 0.0);
    assert!(matches!(
        decusum_step(&DetectorState::default(), &m, None),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        decusum_step(&DetectorState::starting_at(-1.0), &m, Some(0.0)),
        Err(Error::Contract(_))
    ));
}

#[test]
fn cusum_examples() {
    let m = gaussian(0.5, 0.1, 0.0, 0.0);
    // x with LLR -5: 0.5 x - 0.125 = -5
    assert_eq!(cusum_step(0.0, &m, -9.75).unwrap(), 0.0);
    assert_abs_diff_eq!(cusum_step(1.0, &m, 1.0).unwrap(), 1.375, epsilon = 1e-15);
    assert_eq!(cusum_step(0.2, &m, -0.5).unwrap(), 0.0);
}

#[test]
fn censor_examples() {
    let m = gaussian(0.5, 0.1, 2.0, 0.0);
    assert_eq!(
        censor(&DetectorState::starting_at(0.5), &m),
        Uplink::Value(0.5)
    );
    assert_eq!(censor(&DetectorState::starting_at(0.0), &m), Uplink::Null);
    assert_eq!(censor(&DetectorState::starting_at(-1.0), &m), Uplink::Null);
    assert_eq!(
        censor_binary(&DetectorState::starting_at(2.0), 1.5),
        Uplink::Value(1.0)
    );
    assert_eq!(
        censor_binary(&DetectorState::starting_at(1.5), 1.5),
        Uplink::Null
    );
    assert_eq!(
        censor_binary(&DetectorState::starting_at(-0.2), 0.0),
        Uplink::Null
    );
    assert_eq!(Uplink::Null.value_or_zero(), 0.0);
    assert!(!Uplink::Null.is_transmitted());
}

#[test]
fn skip_bound_examples() {
    assert_eq!(
        max_consecutive_skips(&gaussian(0.5, 0.1, 0.0, 0.0)),
        Some(1)
    );
    assert_eq!(
        max_consecutive_skips(&gaussian(0.5, 0.5, 2.0, 0.0)),
        Some(5)
    );
    assert_eq!(
        max_consecutive_skips(&gaussian(0.5, 0.5, f64::INFINITY, 0.0)),
        None
    );
}

/// Drives CuSum and DE-CuSum through `n` observations of `model`; the
/// DE-CuSum consumes slot `k`'s observation only when it samples.
fn paired(model: &SensorModel, n: usize, post: bool, seed: u64) -> Vec<(f64, DetectorState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = 0.0;
    let mut s = DetectorState::default();
    (0..n)
        .map(|_| {
            let draw = model.draw(post, &mut rng);
            c = cusum_step(c, model, draw.x).unwrap();
            let obs = decusum_should_sample(&s).then_some(draw.x);
            s = decusum_step(&s, model, obs).unwrap();
            (c, s)
        })
        .collect()
}

fn model_strategy() -> impl Strategy<Value = SensorModel> {
    let gaussian_models = (
        0.1f64..1.5,
        0.01f64..2.0,
        prop_oneof![Just(0.0), 0.1f64..20.0, Just(f64::INFINITY)],
    )
        .prop_map(|(theta, mu, h)| gaussian(theta, mu, h, 0.0));
    let discrete_models = (0.05f64..0.45, 0.55f64..0.95, 0.05f64..3.0, 0.0f64..6.0)
        .prop_map(|(p0, p1, mu, h)| bernoulli(p0, p1, mu, h, 0.0));
    prop_oneof![gaussian_models, discrete_models]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cusum_dominates_decusum(model in model_strategy(), post in any::<bool>(), seed in any::<u64>()) {
        for (n, (c, s)) in paired(&model, 2000, post, seed).into_iter().enumerate() {
            prop_assert!(c >= s.w, "slot {}: C = {} < W = {}", n + 1, c, s.w);
        }
    }

    #[test]
    fn statistic_never_below_minus_h(model in model_strategy(), seed in any::<u64>()) {
        for (_, s) in paired(&model, 2000, false, seed) {
            prop_assert!(s.w >= -model.h());
        }
    }

    #[test]
    fn skip_runs_are_bounded(model in model_strategy(), seed in any::<u64>()) {
        let Some(bound) = max_consecutive_skips(&model) else { return Ok(()) };
        let mut run = 0u64;
        for (_, s) in paired(&model, 3000, false, seed) {
            run = if s.took_sample_last { 0 } else { run + 1 };
            prop_assert!(run <= bound, "skip run {} exceeds {}", run, bound);
        }
    }

    #[test]
    fn h_zero_reduces_to_cusum(theta in 0.1f64..1.5, mu in 0.01f64..2.0, post in any::<bool>(), seed in any::<u64>()) {
        let model = gaussian(theta, mu, 0.0, 0.0);
        for (c, s) in paired(&model, 2000, post, seed) {
            prop_assert!(s.took_sample_last);
            prop_assert_eq!(c.to_bits(), s.w.to_bits());
        }
    }

    #[test]
    fn skip_phase_is_deterministic(w0 in -20.0f64..-1e-6, mu in 0.01f64..3.0) {
        let model = gaussian(0.5, mu, 20.0, 0.0);
        let mut s = DetectorState::starting_at(w0);
        let mut skipped = 0u64;
        let mut expected = w0;
        while !decusum_should_sample(&s) {
            s = decusum_step(&s, &model, None).unwrap();
            expected = if expected + mu >= -RESET_TOL * mu { 0.0 } else { expected + mu };
            prop_assert_eq!(s.w, expected);
            skipped += 1;
        }
        prop_assert_eq!(s.w, 0.0);
        // ceil(|w| / mu), up to one slot of rounding in the repeated sum
        let predicted = (-w0 / mu).ceil() as u64;
        prop_assert!(skipped.abs_diff(predicted) <= 1, "{} skips, predicted {}", skipped, predicted);
    }

    #[test]
    fn transmissions_need_a_positive_statistic(w in -5.0f64..5.0, d in 0.0f64..3.0) {
        let model = gaussian(0.5, 0.1, 5.0, d);
        match censor(&DetectorState::starting_at(w), &model) {
            Uplink::Value(v) => prop_assert!(v > d && v > 0.0 && v == w),
            Uplink::Null => prop_assert!(w <= d),
        }
    }
}

#[test]
fn dominance_on_three_point_lattice() {
    for &(mu, h) in &[(0.1, 0.0), (0.3, 0.6), (0.05, 3.0)] {
        let model = three_point(0.3, mu, h);
        for seed in 0..20 {
            for (c, s) in paired(&model, 5000, seed % 2 == 0, seed) {
                assert!(c >= s.w);
            }
        }
    }
}
