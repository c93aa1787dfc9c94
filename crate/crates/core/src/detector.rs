//! Per-sensor statistics: CuSum, DE-CuSum and the censoring maps that
//! produce the uplink value of a slot.
//!
//! A DE-CuSum statistic samples while `w >= 0`. A sampled observation moves it
//! to `max(w + llr, -h)`; while `w < 0` the sensor sleeps and the statistic is
//! credited `mu` per slot until it is reset to exactly zero.

use crate::error::{Error, Result};
use crate::model::SensorModel;

/// Relative slack, in units of `mu`, of the reset to zero at the end of a sleep.
pub const RESET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState {
    /// Current statistic `W_n`.
    pub w: f64,
    /// Whether slot `slot` consumed an observation.
    pub took_sample_last: bool,
    /// Number of slots processed so far.
    pub slot: u64,
}

impl Default for DetectorState {
    fn default() -> Self {
        DetectorState {
            w: 0.0,
            took_sample_last: false,
            slot: 0,
        }
    }
}

impl DetectorState {
    /// State before any observation, with an explicit starting statistic.
    pub fn starting_at(w: f64) -> Self {
        DetectorState {
            w,
            ..Default::default()
        }
    }

    /// Applies a sampled slot with the given LLR and clamp depth.
    #[inline]
    pub fn sampled(self, llr: f64, h: f64) -> Self {
        // 0.0 - h rather than -h: with h = 0 the floor is +0.0, as in CuSum
        let floor = 0.0 - h;
        DetectorState {
            w: (self.w + llr).max(floor),
            took_sample_last: true,
            slot: self.slot + 1,
        }
    }

    /// Applies a skipped slot with sleep credit `mu`.
    ///
    /// A statistic that lands within `RESET_TOL * mu` below zero is reset to
    /// zero, so a sleep of `k` credits from `-k mu` ends on zero despite rounding.
    #[inline]
    pub fn skipped(self, mu: f64) -> Self {
        let v = self.w + mu;
        let w = if v >= -RESET_TOL * mu { 0.0 } else { v };
        DetectorState {
            w,
            took_sample_last: false,
            slot: self.slot + 1,
        }
    }
}

/// Whether the next slot takes an observation.
#[inline]
pub fn decusum_should_sample(state: &DetectorState) -> bool {
    state.w >= 0.0
}

/// Advances the DE-CuSum statistic by one slot.
///
/// `obs` must be present exactly when [`decusum_should_sample`] holds.
pub fn decusum_step(
    state: &DetectorState,
    model: &SensorModel,
    obs: Option<f64>,
) -> Result<DetectorState> {
    match (decusum_should_sample(state), obs) {
        (true, Some(x)) => Ok(state.sampled(model.llr(x)?, model.h())),
        (false, None) => Ok(state.skipped(model.mu())),
        (true, None) => Err(Error::Contract(format!(
            "slot {} must sample (w = {}) but no observation was given",
            state.slot + 1,
            state.w
        ))),
        (false, Some(_)) => Err(Error::Contract(format!(
            "slot {} is a skip slot (w = {}) but an observation was given",
            state.slot + 1,
            state.w
        ))),
    }
}

/// `max(0, c + llr(obs))`.
pub fn cusum_step(c: f64, model: &SensorModel, obs: f64) -> Result<f64> {
    debug_assert!(c >= 0.0, "CuSum statistic must be nonnegative");
    Ok((c + model.llr(obs)?).max(0.0))
}

/// Value sent to the fusion center in one slot; `Null` means no transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Uplink {
    Null,
    Value(f64),
}

impl Uplink {
    /// Fusion-center reading: `Null` counts as zero.
    #[inline]
    pub fn value_or_zero(self) -> f64 {
        match self {
            Uplink::Null => 0.0,
            Uplink::Value(v) => v,
        }
    }

    #[inline]
    pub fn is_transmitted(self) -> bool {
        matches!(self, Uplink::Value(_))
    }
}

/// Transmits `w` when `w > D`.
#[inline]
pub fn censor(state: &DetectorState, model: &SensorModel) -> Uplink {
    if state.w > model.d_local() {
        Uplink::Value(state.w)
    } else {
        Uplink::Null
    }
}

/// Transmits a one when `w > threshold` (DE-All uplink).
#[inline]
pub fn censor_binary(state: &DetectorState, threshold: f64) -> Uplink {
    if state.w > threshold {
        Uplink::Value(1.0)
    } else {
        Uplink::Null
    }
}

/// Bound `ceil(h / mu) + 1` on consecutive skipped slots; `None` for infinite `h`.
pub fn max_consecutive_skips(model: &SensorModel) -> Option<u64> {
    if model.h().is_finite() {
        Some((model.h() / model.mu()).ceil() as u64 + 1)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Density;

    fn gaussian(mu: f64, h: f64, d: f64) -> SensorModel {
        SensorModel::new(
            Density::gaussian(0.0, 1.0).unwrap(),
            Density::gaussian(0.5, 1.0).unwrap(),
            mu,
            h,
            d,
        )
        .unwrap()
    }

    fn at(w: f64) -> DetectorState {
        DetectorState::starting_at(w)
    }

    #[test]
    fn should_sample_boundary() {
        assert!(decusum_should_sample(&at(0.0)));
        assert!(!decusum_should_sample(&at(-0.01)));
        assert!(decusum_should_sample(&at(3.2)));
        assert!(decusum_should_sample(&DetectorState::default()));
    }

    #[test]
    fn step_examples() {
        let m = gaussian(0.1, 10.0, 0.0);
        let s = decusum_step(&at(-0.05), &m, None).unwrap();
        assert_eq!(s.w, 0.0);
        assert!(!s.took_sample_last);
        assert_eq!(s.slot, 1);

        assert_eq!(at(0.5).sampled(-3.0, 2.0).w, -2.0);

        let s = decusum_step(&at(0.0), &m, Some(1.0)).unwrap();
        assert!((s.w - 0.375).abs() < 1e-15);
        assert!(s.took_sample_last);
    }

    #[test]
    fn step_contract_violations() {
        let m = gaussian(0.1, 10.0, 0.0);
        assert!(matches!(
            decusum_step(&at(0.0), &m, None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            decusum_step(&at(-1.0), &m, Some(0.3)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cusum_examples() {
        let m = gaussian(0.1, 0.0, 0.0);
        // obs giving llr = -5: 0.5 x - 0.125 = -5
        assert_eq!(cusum_step(0.0, &m, -9.75).unwrap(), 0.0);
        assert!((cusum_step(1.0, &m, 1.0).unwrap() - 1.375).abs() < 1e-15);
        assert_eq!(cusum_step(0.2, &m, -0.5).unwrap(), 0.0);
    }

    #[test]
    fn censor_examples() {
        let m = gaussian(0.1, 1.0, 0.0);
        assert_eq!(censor(&at(0.5), &m), Uplink::Value(0.5));
        assert_eq!(censor(&at(0.0), &m), Uplink::Null);
        assert_eq!(censor(&at(-1.0), &m), Uplink::Null);
        assert_eq!(censor_binary(&at(2.0), 1.5), Uplink::Value(1.0));
        assert_eq!(censor_binary(&at(1.5), 1.5), Uplink::Null);
        assert_eq!(censor_binary(&at(-0.2), 0.0), Uplink::Null);
        assert_eq!(Uplink::Null.value_or_zero(), 0.0);
    }

    #[test]
    fn skip_bound_examples() {
        assert_eq!(max_consecutive_skips(&gaussian(0.1, 0.0, 0.0)), Some(1));
        assert_eq!(max_consecutive_skips(&gaussian(0.5, 2.0, 0.0)), Some(5));
        assert_eq!(
            max_consecutive_skips(&gaussian(0.5, f64::INFINITY, 0.0)),
            None
        );
    }

    #[test]
    fn skip_phase_is_deterministic() {
        let mu = 0.3;
        let mut s = at(-1.0);
        let mut count = 0;
        while !decusum_should_sample(&s) {
            s = s.skipped(mu);
            count += 1;
        }
        assert_eq!(count, (1.0f64 / mu).ceil() as usize);
        assert_eq!(s.w, 0.0);
    }
}
