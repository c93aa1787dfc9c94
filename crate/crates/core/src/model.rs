//! Observation densities, log-likelihood ratios, KL divergences and the
//! multi-sensor change scenario.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Error, Result};

/// Discrete LLR tables are rounded to multiples of this unit (2^-40). Walk sums
/// of such values are exact in `f64` while |W| < 2^12, so a lattice walk that
/// returns to zero lands on exactly `0.0` instead of a rounding residue that
/// would trigger a spurious sleep.
pub const LLR_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

const PROB_SUM_TOL: f64 = 1e-12;

fn snap_to_quantum(v: f64) -> f64 {
    (v / LLR_QUANTUM).round() * LLR_QUANTUM
}

/// A univariate observation density: Gaussian or finite discrete.
#[derive(Debug, Clone, PartialEq)]
pub struct Density(Repr);

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Gaussian { mean: f64, variance: f64 },
    Discrete { support: Vec<f64>, probs: Vec<f64> },
}

impl Density {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            bail!(Config, "gaussian mean must be finite, got {mean}");
        }
        if !(variance > 0.0 && variance.is_finite()) {
            bail!(
                Config,
                "gaussian variance must be positive and finite, got {variance}"
            );
        }
        Ok(Density(Repr::Gaussian { mean, variance }))
    }

    pub fn discrete(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            bail!(Config, "discrete support is empty");
        }
        if support.len() != probs.len() {
            bail!(
                Config,
                "discrete support has {} values but {} probabilities",
                support.len(),
                probs.len()
            );
        }
        if support.iter().any(|v| !v.is_finite()) {
            bail!(Config, "discrete support values must be finite");
        }
        for (i, a) in support.iter().enumerate() {
            if support[..i].contains(a) {
                bail!(Config, "discrete support value {a} is repeated");
            }
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            bail!(
                Config,
                "discrete probabilities must be nonnegative and finite"
            );
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            bail!(Config, "discrete probabilities sum to {total}, expected 1");
        }
        Ok(Density(Repr::Discrete { support, probs }))
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.0, Repr::Discrete { .. })
    }

    /// Support points of a discrete density.
    pub fn support(&self) -> Option<&[f64]> {
        match &self.0 {
            Repr::Discrete { support, .. } => Some(support),
            Repr::Gaussian { .. } => None,
        }
    }

    /// Point probabilities of a discrete density, aligned with [`Density::support`].
    pub fn probabilities(&self) -> Option<&[f64]> {
        match &self.0 {
            Repr::Discrete { probs, .. } => Some(probs),
            Repr::Gaussian { .. } => None,
        }
    }

    /// `(mean, variance)` of a Gaussian density.
    pub fn gaussian_params(&self) -> Option<(f64, f64)> {
        match self.0 {
            Repr::Gaussian { mean, variance } => Some((mean, variance)),
            Repr::Discrete { .. } => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.0 {
            Repr::Gaussian { mean, .. } => *mean,
            Repr::Discrete { support, probs } => {
                support.iter().zip(probs).map(|(x, p)| x * p).sum()
            }
        }
    }

    /// Draws one observation.
    ///
    /// Gaussian draws are `mean + sd * z` with `z` standard normal; discrete
    /// draws invert the CDF at a single uniform. Both consume the same amount
    /// of randomness regardless of parameters, which keeps paired streams aligned.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.0 {
            Repr::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            Repr::Discrete { support, probs } => {
                let u: f64 = rng.random();
                support[inverse_cdf(probs.iter().copied(), u)]
            }
        }
    }

    fn check_compatible(&self, other: &Density) -> Result<()> {
        match (&self.0, &other.0) {
            (Repr::Gaussian { .. }, Repr::Gaussian { .. }) => Ok(()),
            (Repr::Discrete { support: a, .. }, Repr::Discrete { support: b, .. }) => {
                if a == b {
                    Ok(())
                } else {
                    Err(Error::Config(
                        "discrete densities have different supports".into(),
                    ))
                }
            }
            _ => Err(Error::Config(
                "densities are of different kinds (gaussian vs discrete)".into(),
            )),
        }
    }
}

fn inverse_cdf(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Free-function form of [`Density::sample`].
pub fn sample<R: Rng + ?Sized>(d: &Density, rng: &mut R) -> f64 {
    d.sample(rng)
}

/// `log(f_post(x) / f_pre(x))`.
pub fn log_likelihood_ratio(d_pre: &Density, d_post: &Density, x: f64) -> Result<f64> {
    d_pre.check_compatible(d_post)?;
    match (&d_pre.0, &d_post.0) {
        (
            Repr::Gaussian {
                mean: m0,
                variance: v0,
            },
            Repr::Gaussian {
                mean: m1,
                variance: v1,
            },
        ) => Ok(
            0.5 * (v0 / v1).ln() + (x - m0).powi(2) / (2.0 * v0) - (x - m1).powi(2) / (2.0 * v1)
        ),
        (Repr::Discrete { support, probs: p0 }, Repr::Discrete { probs: p1, .. }) => {
            let i = support
                .iter()
                .position(|s| *s == x)
                .ok_or_else(|| Error::Domain(format!("{x} is not in the discrete support")))?;
            Ok((p1[i] / p0[i]).ln())
        }
        _ => unreachable!("compatibility checked above"),
    }
}

/// `D(a || b)`.
pub fn kl_divergence(d_a: &Density, d_b: &Density) -> Result<f64> {
    d_a.check_compatible(d_b)?;
    match (&d_a.0, &d_b.0) {
        (
            Repr::Gaussian {
                mean: ma,
                variance: va,
            },
            Repr::Gaussian {
                mean: mb,
                variance: vb,
            },
        ) => {
            if va == vb {
                Ok((ma - mb).powi(2) / (2.0 * va))
            } else {
                Ok(0.5 * ((vb / va).ln() + (va + (ma - mb).powi(2)) / vb - 1.0))
            }
        }
        (Repr::Discrete { support, probs: pa }, Repr::Discrete { probs: pb, .. }) => {
            let mut kl = 0.0;
            for ((x, a), b) in support.iter().zip(pa).zip(pb) {
                if *a == 0.0 {
                    continue;
                }
                if *b == 0.0 {
                    bail!(InfiniteDivergence, "second density has zero mass at {x}");
                }
                kl += a * (a / b).ln();
            }
            Ok(kl.max(0.0))
        }
        _ => unreachable!("compatibility checked above"),
    }
}

/// One observation together with its log-likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub x: f64,
    pub llr: f64,
}

#[derive(Debug, Clone)]
enum LlrEval {
    Gaussian(GaussianDraw),
    Discrete {
        support: Vec<f64>,
        probs_pre: Vec<f64>,
        probs_post: Vec<f64>,
        llr: Vec<f64>,
    },
}

/// Gaussian observation and LLR constants of one sensor.
///
/// The LLR is the quadratic `(c2 x + c1) x + c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDraw {
    pre_mean: f64,
    pre_sd: f64,
    post_mean: f64,
    post_sd: f64,
    c2: f64,
    c1: f64,
    c0: f64,
}

impl GaussianDraw {
    #[inline]
    pub fn llr(&self, x: f64) -> f64 {
        (self.c2 * x + self.c1) * x + self.c0
    }

    /// Draws `mean + sd * z` from the pre- or post-change law.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, post_change: bool, rng: &mut R) -> Draw {
        let z: f64 = rng.sample(StandardNormal);
        let x = if post_change {
            self.post_mean + self.post_sd * z
        } else {
            self.pre_mean + self.pre_sd * z
        };
        Draw {
            x,
            llr: self.llr(x),
        }
    }
}

/// Pre/post densities and the DE-CuSum parameters of one sensor.
///
/// `mu` is the sleep credit per skipped slot, `h` the clamp depth (may be
/// `f64::INFINITY`) and `d_local` the censoring level (may be infinite).
#[derive(Debug, Clone)]
pub struct SensorModel {
    pre: Density,
    post: Density,
    mu: f64,
    h: f64,
    d_local: f64,
    kl_post_pre: f64,
    kl_pre_post: f64,
    eval: LlrEval,
}

impl SensorModel {
    pub fn new(pre: Density, post: Density, mu: f64, h: f64, d_local: f64) -> Result<Self> {
        pre.check_compatible(&post)?;
        if !(mu > 0.0 && mu.is_finite()) {
            bail!(Config, "mu must be positive and finite, got {mu}");
        }
        if !(h >= 0.0) {
            bail!(Config, "h must be nonnegative (or infinite), got {h}");
        }
        if !(d_local >= 0.0) {
            bail!(
                Config,
                "censoring level D must be nonnegative, got {d_local}"
            );
        }
        let kl_post_pre = kl_divergence(&post, &pre)?;
        let kl_pre_post = kl_divergence(&pre, &post)?;
        for (name, v) in [("D(post||pre)", kl_post_pre), ("D(pre||post)", kl_pre_post)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Config, "{name} must be finite and positive, got {v}");
            }
        }
        let eval = match (&pre.0, &post.0) {
            (
                Repr::Gaussian {
                    mean: m0,
                    variance: v0,
                },
                Repr::Gaussian {
                    mean: m1,
                    variance: v1,
                },
            ) => LlrEval::Gaussian(GaussianDraw {
                pre_mean: *m0,
                pre_sd: v0.sqrt(),
                post_mean: *m1,
                post_sd: v1.sqrt(),
                c2: 0.5 / v0 - 0.5 / v1,
                c1: m1 / v1 - m0 / v0,
                c0: 0.5 * (v0 / v1).ln() + m0 * m0 / (2.0 * v0) - m1 * m1 / (2.0 * v1),
            }),
            (Repr::Discrete { support, probs: p0 }, Repr::Discrete { probs: p1, .. }) => {
                let llr = p0
                    .iter()
                    .zip(p1)
                    .map(|(a, b)| {
                        if *a == 0.0 && *b == 0.0 {
                            0.0
                        } else {
                            snap_to_quantum((b / a).ln())
                        }
                    })
                    .collect();
                LlrEval::Discrete {
                    support: support.clone(),
                    probs_pre: p0.clone(),
                    probs_post: p1.clone(),
                    llr,
                }
            }
            _ => unreachable!("compatibility checked above"),
        };
        Ok(SensorModel {
            pre,
            post,
            mu,
            h,
            d_local,
            kl_post_pre,
            kl_pre_post,
            eval,
        })
    }

    /// Same densities, different detector parameters.
    pub fn with_params(&self, mu: f64, h: f64, d_local: f64) -> Result<Self> {
        SensorModel::new(self.pre.clone(), self.post.clone(), mu, h, d_local)
    }

    pub fn pre(&self) -> &Density {
        &self.pre
    }

    pub fn post(&self) -> &Density {
        &self.post
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn d_local(&self) -> f64 {
        self.d_local
    }

    /// `D(f1 || f0)`, the post-change drift of the LLR walk.
    pub fn kl_post_pre(&self) -> f64 {
        self.kl_post_pre
    }

    /// `D(f0 || f1)`, the magnitude of the pre-change drift.
    pub fn kl_pre_post(&self) -> f64 {
        self.kl_pre_post
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.eval, LlrEval::Discrete { .. })
    }

    /// Sampling constants of a Gaussian model.
    pub fn gaussian_draw(&self) -> Option<GaussianDraw> {
        match &self.eval {
            LlrEval::Gaussian(g) => Some(*g),
            LlrEval::Discrete { .. } => None,
        }
    }

    /// LLR table of a discrete model, aligned with the support (quantized, see [`LLR_QUANTUM`]).
    pub fn llr_table(&self) -> Option<&[f64]> {
        match &self.eval {
            LlrEval::Discrete { llr, .. } => Some(llr),
            LlrEval::Gaussian { .. } => None,
        }
    }

    /// LLR of an observation as used by the detectors.
    pub fn llr(&self, x: f64) -> Result<f64> {
        match &self.eval {
            LlrEval::Gaussian(g) => Ok(g.llr(x)),
            LlrEval::Discrete { support, llr, .. } => support
                .iter()
                .position(|s| *s == x)
                .map(|i| llr[i])
                .ok_or_else(|| Error::Domain(format!("{x} is not in the discrete support"))),
        }
    }

    /// Draws an observation from the pre- or post-change density.
    ///
    /// Uses exactly the randomness of [`Density::sample`], so the same stream
    /// state yields coupled pre/post observations.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, post_change: bool, rng: &mut R) -> Draw {
        match &self.eval {
            LlrEval::Gaussian(g) => g.draw(post_change, rng),
            LlrEval::Discrete {
                support,
                probs_pre,
                probs_post,
                llr,
            } => {
                let u: f64 = rng.random();
                let probs = if post_change { probs_post } else { probs_pre };
                let i = inverse_cdf(probs.iter().copied(), u);
                Draw {
                    x: support[i],
                    llr: llr[i],
                }
            }
        }
    }
}

/// When the change happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangePoint {
    /// First post-change slot (1-based).
    At(u64),
    Never,
}

impl ChangePoint {
    /// True if the observation at `slot` comes from the post-change law.
    #[inline]
    pub fn is_post(self, slot: u64) -> bool {
        match self {
            ChangePoint::At(g) => slot >= g,
            ChangePoint::Never => false,
        }
    }

    pub fn slot(self) -> Option<u64> {
        match self {
            ChangePoint::At(g) => Some(g),
            ChangePoint::Never => None,
        }
    }
}

/// Sensors, the affected subset (0-based indices) and the change point.
#[derive(Debug, Clone)]
pub struct Scenario {
    sensors: Vec<SensorModel>,
    affected: Vec<usize>,
    affected_mask: Vec<bool>,
    change_point: ChangePoint,
}

impl Scenario {
    pub fn new(
        sensors: Vec<SensorModel>,
        mut affected: Vec<usize>,
        change_point: ChangePoint,
    ) -> Result<Self> {
        if sensors.is_empty() {
            bail!(Config, "scenario needs at least one sensor");
        }
        if let ChangePoint::At(0) = change_point {
            bail!(Config, "change point must be a positive slot index");
        }
        let len = sensors.len();
        let mut affected_mask = vec![false; len];
        for &k in &affected {
            if k >= len {
                bail!(Config, "affected index {k} out of range for {len} sensors");
            }
            if affected_mask[k] {
                bail!(Config, "affected index {k} listed twice");
            }
            affected_mask[k] = true;
        }
        if affected.is_empty() && change_point != ChangePoint::Never {
            bail!(Config, "affected set is empty but a change point is set");
        }
        affected.sort_unstable();
        Ok(Scenario {
            sensors,
            affected,
            affected_mask,
            change_point,
        })
    }

    /// `count` copies of one sensor model.
    pub fn identical(
        model: SensorModel,
        count: usize,
        affected: Vec<usize>,
        change_point: ChangePoint,
    ) -> Result<Self> {
        Scenario::new(vec![model; count], affected, change_point)
    }

    pub fn sensors(&self) -> &[SensorModel] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn affected(&self) -> &[usize] {
        &self.affected
    }

    #[inline]
    pub fn is_affected(&self, sensor: usize) -> bool {
        self.affected_mask[sensor]
    }

    pub fn change_point(&self) -> ChangePoint {
        self.change_point
    }

    pub fn with_change_point(&self, change_point: ChangePoint) -> Result<Self> {
        Scenario::new(self.sensors.clone(), self.affected.clone(), change_point)
    }

    pub fn with_affected(&self, affected: Vec<usize>) -> Result<Self> {
        Scenario::new(self.sensors.clone(), affected, self.change_point)
    }

    pub fn with_sensors(&self, sensors: Vec<SensorModel>) -> Result<Self> {
        Scenario::new(sensors, self.affected.clone(), self.change_point)
    }

    /// True if every sensor has the same densities and parameters.
    pub fn is_exchangeable(&self) -> bool {
        let first = &self.sensors[0];
        self.sensors.iter().all(|s| {
            s.pre == first.pre
                && s.post == first.post
                && s.mu == first.mu
                && s.h == first.h
                && s.d_local == first.d_local
        })
    }
}

/// Leading-order delay yardstick `|log alpha| / sum_{k in affected} D(f1k || f0k)`.
pub fn lower_bound_delay(scenario: &Scenario, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        bail!(Domain, "alpha must lie in (0, 1], got {alpha}");
    }
    if scenario.affected.is_empty() {
        bail!(Domain, "lower bound needs a nonempty affected set");
    }
    let total: f64 = scenario
        .affected
        .iter()
        .map(|&k| scenario.sensors[k].kl_post_pre)
        .sum();
    Ok(alpha.ln().abs() / total)
}
