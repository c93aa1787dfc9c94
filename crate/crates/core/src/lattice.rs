//! Exact pre-change quantities for discrete sensors whose LLR values, `mu`
//! and `h` are integer multiples of a common unit `delta`.
//!
//! The DE-CuSum statistic then lives on `{-h, ..., a}` in units of `delta`
//! and expected hitting times solve a dense linear system.

use nalgebra::{DMatrix, DVector};

use crate::error::{bail, Error, Result};
use crate::metrics::RenewalQuantities;
use crate::model::SensorModel;

/// Default bound on the number of transient states of one chain.
pub const DEFAULT_MAX_STATES: usize = 3000;

/// Relative tolerance for a value to count as an integer multiple of `delta`.
const GRID_TOL: f64 = 1e-12;

/// Largest denominator tried when matching parameter ratios.
const MAX_DENOMINATOR: u64 = 10_000;

/// Thresholds within this many grid units of an integer count as that integer.
const SNAP_TOL: f64 = 1e-9;

/// Height, in LLR units, above which the renewal walk is held at the top
/// state. The pre-change walk exceeds level `y` with probability at most
/// `exp(-y)`.
const RENEWAL_CEILING: f64 = 40.0;

/// One sensor's DE-CuSum chain on the integer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeModel {
    /// Grid unit `delta`.
    pub step: f64,
    /// LLR values in units of `delta`, one per outcome with positive pre-change mass.
    pub llr_steps: Vec<i64>,
    pub probs_pre: Vec<f64>,
    pub mu_steps: u64,
    pub h_steps: u64,
    /// Largest non-absorbing state; the chain stops on entering `a_steps + 1`.
    pub a_steps: u64,
    /// Largest non-transmitting state; `None` when `D` is infinite.
    pub d_steps: Option<u64>,
    pub max_states: usize,
}

impl LatticeModel {
    /// Builds a lattice directly from integer steps.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        step: f64,
        llr_steps: Vec<i64>,
        probs_pre: Vec<f64>,
        mu_steps: u64,
        h_steps: u64,
        a_steps: u64,
        d_steps: Option<u64>,
        max_states: usize,
    ) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            bail!(Domain, "grid unit must be positive, got {step}");
        }
        if llr_steps.is_empty() || llr_steps.len() != probs_pre.len() {
            bail!(Domain, "need one probability per LLR step");
        }
        if probs_pre.iter().any(|p| !(*p >= 0.0))
            || (probs_pre.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            bail!(
                Domain,
                "pre-change probabilities must be nonnegative and sum to 1"
            );
        }
        if mu_steps == 0 {
            bail!(Domain, "mu must be at least one grid unit");
        }
        let states = (h_steps + a_steps + 1) as usize;
        if states > max_states {
            bail!(
                Domain,
                "{states} lattice states exceed the bound of {max_states}"
            );
        }
        Ok(LatticeModel {
            step,
            llr_steps,
            probs_pre,
            mu_steps,
            h_steps,
            a_steps,
            d_steps,
            max_states,
        })
    }

    fn index(&self, k: i64) -> usize {
        (k + self.h_steps as i64) as usize
    }

    /// Transient states `-h..=a`.
    fn states(&self) -> impl Iterator<Item = i64> {
        -(self.h_steps as i64)..=self.a_steps as i64
    }

    fn outcomes(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.llr_steps
            .iter()
            .copied()
            .zip(self.probs_pre.iter().copied())
            .filter(|(_, p)| *p > 0.0)
    }
}

/// Maps a discrete sensor and fusion-side threshold `a` onto a lattice.
pub fn lattice_build(model: &SensorModel, a: f64) -> Result<LatticeModel> {
    lattice_build_with_limit(model, a, DEFAULT_MAX_STATES)
}

pub fn lattice_build_with_limit(
    model: &SensorModel,
    a: f64,
    max_states: usize,
) -> Result<LatticeModel> {
    let (Some(table), Some(probs)) = (model.llr_table(), model.pre().probabilities()) else {
        bail!(Domain, "lattice needs a discrete model");
    };
    if !(a > 0.0 && a.is_finite()) {
        bail!(Domain, "threshold must be positive and finite, got {a}");
    }
    if !model.h().is_finite() {
        bail!(Domain, "lattice needs finite h");
    }
    let (llr, probs_pre): (Vec<f64>, Vec<f64>) = table
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(l, p)| (*l, *p))
        .unzip();

    let mut values: Vec<f64> = llr
        .iter()
        .copied()
        .filter(|v| *v != 0.0)
        .map(f64::abs)
        .collect();
    values.push(model.mu());
    if model.h() > 0.0 {
        values.push(model.h());
    }
    let step = common_unit(&values)?;
    let to_steps = |v: f64, what: &str| -> Result<i64> {
        let n = (v / step).round();
        if (n * step - v).abs() > GRID_TOL * v.abs().max(step) {
            bail!(
                Incommensurable,
                "{what} = {v} is not a multiple of the grid unit {step}"
            );
        }
        Ok(n as i64)
    };
    let llr_steps = llr
        .iter()
        .map(|v| to_steps(*v, "LLR value"))
        .collect::<Result<Vec<_>>>()?;
    let mu_steps = to_steps(model.mu(), "mu")? as u64;
    let h_steps = to_steps(model.h(), "h")? as u64;
    let a_steps = floor_steps(a, step);
    let d_steps = model
        .d_local()
        .is_finite()
        .then(|| floor_steps(model.d_local(), step));
    LatticeModel::new(
        step, llr_steps, probs_pre, mu_steps, h_steps, a_steps, d_steps, max_states,
    )
}

/// Largest `k` with `k * step <= v`, treating near-integers as integers.
/// Both `a` and `D` are compared strictly (`w > v`), so this is exact on the grid.
fn floor_steps(v: f64, step: f64) -> u64 {
    let r = v / step;
    if (r - r.round()).abs() <= SNAP_TOL {
        r.round() as u64
    } else {
        r.floor() as u64
    }
}

/// Largest `delta` such that every value is an integer multiple of it.
fn common_unit(values: &[f64]) -> Result<f64> {
    let base = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut fracs = Vec::with_capacity(values.len());
    for &v in values {
        match rational_approx(v / base) {
            Some(pq) => fracs.push(pq),
            None => bail!(Incommensurable, "{v} and {base} have no common grid unit"),
        }
    }
    let denom = fracs.iter().fold(1u64, |acc, &(_, q)| lcm(acc, q));
    if denom > MAX_DENOMINATOR {
        bail!(
            Incommensurable,
            "common denominator {denom} exceeds {MAX_DENOMINATOR}"
        );
    }
    let g = fracs
        .iter()
        .fold(0u64, |acc, &(p, q)| gcd(acc, p * (denom / q)));
    Ok(base * g as f64 / denom as f64)
}

/// Continued-fraction approximation `p/q` of `x` within `GRID_TOL` relative.
fn rational_approx(x: f64) -> Option<(u64, u64)> {
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > u32::MAX as f64 {
            return None;
        }
        let a = a as u64;
        let (p2, q2) = (
            a.checked_mul(p1)?.checked_add(p0)?,
            a.checked_mul(q1)?.checked_add(q0)?,
        );
        if q2 > MAX_DENOMINATOR {
            return None;
        }
        if ((p2 as f64 / q2 as f64) - x).abs() <= GRID_TOL * x {
            return Some((p2, q2));
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a as f64;
        if frac <= 0.0 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// `E_inf[tau]` for the DE-CuSum chain started at `w = 0`, skip slots included.
pub fn exact_mean_stop(lm: &LatticeModel) -> Result<f64> {
    let n = (lm.h_steps + lm.a_steps + 1) as usize;
    let mut m = DMatrix::<f64>::identity(n, n);
    let floor = -(lm.h_steps as i64);
    let top = lm.a_steps as i64;
    for k in lm.states() {
        let row = lm.index(k);
        if k >= 0 {
            for (s, p) in lm.outcomes() {
                let next = (k + s).max(floor);
                if next <= top {
                    m[(row, lm.index(next))] -= p;
                }
            }
        } else {
            let next = (k + lm.mu_steps as i64).min(0);
            m[(row, lm.index(next))] -= 1.0;
        }
    }
    let t = solve(m, &[DVector::from_element(n, 1.0)])?;
    let value = t[0][lm.index(0)];
    if !(value.is_finite() && value >= 1.0) {
        bail!(
            Model,
            "absorption time {value} is not a valid mean; the threshold may be unreachable"
        );
    }
    Ok(value)
}

/// `1 / E_inf[tau]`.
pub fn exact_far(lm: &LatticeModel) -> Result<f64> {
    Ok(1.0 / exact_mean_stop(lm)?)
}

/// Ladder-cycle means of the pre-change LLR walk from 0 up to its first
/// negative value.
pub fn exact_renewal_quantities(lm: &LatticeModel) -> Result<RenewalQuantities> {
    let top = (RENEWAL_CEILING / lm.step).ceil() as i64;
    let n = (top + 1) as usize;
    if n > lm.max_states {
        bail!(
            Domain,
            "{n} renewal states exceed the bound of {}",
            lm.max_states
        );
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut ones = DVector::from_element(n, 1.0);
    let mut sleep = DVector::zeros(n);
    let mut exceed = DVector::zeros(n);
    for k in 0..=top {
        let row = k as usize;
        for (s, p) in lm.outcomes() {
            let next = k + s;
            if next < 0 {
                let undershoot = (-next).min(lm.h_steps as i64) as u64;
                sleep[row] += p * undershoot.div_ceil(lm.mu_steps) as f64;
            } else {
                let next = next.min(top);
                m[(row, next as usize)] -= p;
                if lm.d_steps.is_some_and(|d| next as u64 > d) {
                    exceed[row] += p;
                }
            }
        }
    }
    ones.fill(1.0);
    let sol = solve(m, &[ones, sleep, exceed])?;
    Ok(RenewalQuantities {
        mean_ladder_epoch: sol[0][0],
        mean_sleep_slots: sol[1][0],
        mean_exceed_count: sol[2][0],
    })
}

/// Exact `(PDC, PTC)` from the renewal-reward formulas.
pub fn exact_pdc_ptc(lm: &LatticeModel) -> Result<(f64, f64)> {
    let rq = exact_renewal_quantities(lm)?;
    let cycle = rq.mean_ladder_epoch + rq.mean_sleep_slots;
    Ok((rq.mean_ladder_epoch / cycle, rq.mean_exceed_count / cycle))
}

fn solve(m: DMatrix<f64>, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let lu = m.lu();
    rhs.iter()
        .map(|b| {
            lu.solve(b)
                .filter(|x| x.iter().all(|v| v.is_finite()))
                .ok_or_else(|| {
                    Error::Model("singular hitting-time system: absorption unreachable".into())
                })
        })
        .collect()
}
