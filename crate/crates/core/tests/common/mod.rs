#![allow(dead_code)]

use std::collections::BTreeMap;

use deqcd::metrics::RenewalQuantities;
use deqcd::model::{Density, SensorModel};

pub fn gaussian(theta: f64, mu: f64, h: f64, d: f64) -> SensorModel {
    SensorModel::new(
        Density::gaussian(0.0, 1.0).unwrap(),
        Density::gaussian(theta, 1.0).unwrap(),
        mu,
        h,
        d,
    )
    .unwrap()
}

/// Bernoulli(p0) to Bernoulli(p1) on {0, 1}, with `mu`, `h`, `d` given in
/// units of the (quantized) LLR of a one.
pub fn bernoulli(p0: f64, p1: f64, mu: f64, h: f64, d: f64) -> SensorModel {
    let pre = Density::discrete(vec![0.0, 1.0], vec![1.0 - p0, p0]).unwrap();
    let post = Density::discrete(vec![0.0, 1.0], vec![1.0 - p1, p1]).unwrap();
    let l = bernoulli_step(&pre, &post);
    SensorModel::new(pre, post, mu * l, h * l, d * l).unwrap()
}

fn bernoulli_step(pre: &Density, post: &Density) -> f64 {
    SensorModel::new(pre.clone(), post.clone(), 1.0, 0.0, 0.0)
        .unwrap()
        .llr_table()
        .unwrap()[1]
}

/// LLR of observing a one in the 0.2 / 0.8 model.
pub fn log4() -> f64 {
    bernoulli(0.2, 0.8, 1.0, 0.0, 0.0).llr_table().unwrap()[1]
}

/// Three-point alphabet whose LLRs are -2, 1 and 3 times `step`.
pub fn three_point(step: f64, mu: f64, h: f64) -> SensorModel {
    let r: Vec<f64> = [-2.0f64, 1.0, 3.0]
        .iter()
        .map(|k| (k * step).exp())
        .collect();
    let p1 = 0.3;
    // p0 + p2 = 1 - p1 and p0 r0 + p1 r1 + p2 r2 = 1 make the post law a distribution
    let p2 = (1.0 - p1 * r[1] - (1.0 - p1) * r[0]) / (r[2] - r[0]);
    let pre = vec![1.0 - p1 - p2, p1, p2];
    let post: Vec<f64> = pre.iter().zip(&r).map(|(p, r)| p * r).collect();
    SensorModel::new(
        Density::discrete(vec![0.0, 1.0, 2.0], pre).unwrap(),
        Density::discrete(vec![0.0, 1.0, 2.0], post).unwrap(),
        mu,
        h,
        0.0,
    )
    .unwrap()
}

/// Integer-step DE-CuSum chain: LLR jumps `steps` with probabilities `probs`.
pub struct Chain {
    pub steps: Vec<i64>,
    pub probs: Vec<f64>,
    pub mu: i64,
    pub h: i64,
    pub a: i64,
}

impl Chain {
    fn next(&self, w: i64) -> Vec<(i64, f64)> {
        if w >= 0 {
            self.steps
                .iter()
                .zip(&self.probs)
                .map(|(k, p)| ((w + k).max(-self.h), *p))
                .collect()
        } else {
            vec![((w + self.mu).min(0), 1.0)]
        }
    }

    /// E[tau] as the sum of survival probabilities, propagating the mass of
    /// every unabsorbed state forward until it is below `1e-16` of the total.
    pub fn mean_stop(&self) -> f64 {
        let mut mass = BTreeMap::from([(0i64, 1.0f64)]);
        let mut total = 0.0;
        loop {
            let alive: f64 = mass.values().sum();
            total += alive;
            if alive < 1e-16 * total {
                return total;
            }
            let mut next = BTreeMap::new();
            for (&w, &m) in &mass {
                for (v, p) in self.next(w) {
                    if v <= self.a {
                        *next.entry(v).or_insert(0.0) += m * p;
                    }
                }
            }
            mass = next;
        }
    }

    /// Ladder-cycle means of the unclamped walk from 0: E[tau_-], the mean
    /// sleep `ceil(|max(S, -h)| / mu)` at the first negative value, and the
    /// mean number of slots above `d` before it.
    pub fn renewal(&self, d: i64) -> RenewalQuantities {
        let mut mass = BTreeMap::from([(0i64, 1.0f64)]);
        let (mut epoch, mut sleep, mut above) = (0.0, 0.0, 0.0);
        while mass.values().sum::<f64>() > 1e-18 {
            let mut next = BTreeMap::new();
            for (&w, &m) in &mass {
                epoch += m;
                for (k, p) in self.steps.iter().zip(&self.probs) {
                    let v = w + k;
                    if v < 0 {
                        let depth = (-v).min(self.h);
                        sleep += m * p * ((depth + self.mu - 1) / self.mu) as f64;
                    } else {
                        if v > d {
                            above += m * p;
                        }
                        *next.entry(v).or_insert(0.0) += m * p;
                    }
                }
            }
            mass = next;
        }
        RenewalQuantities {
            mean_ladder_epoch: epoch,
            mean_sleep_slots: sleep,
            mean_exceed_count: above,
        }
    }
}

/// The 0.2 / 0.8 Bernoulli model in half-LLR steps.
pub fn bernoulli_chain(mu: i64, h: i64, a: i64) -> Chain {
    Chain {
        steps: vec![-2, 2],
        probs: vec![0.8, 0.2],
        mu,
        h,
        a,
    }
}
