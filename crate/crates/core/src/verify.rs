//! Self-check suite behind `deqcd verify`: lattice-oracle cross-checks and
//! pathwise invariants of the detectors and fusion rules.

use std::fmt;

use crate::detector::max_consecutive_skips;
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::fusion::{FusionPolicy, FusionRule};
use crate::lattice::{exact_mean_stop, exact_pdc_ptc, lattice_build, LatticeModel};
use crate::metrics::{estimate_pdc_ptc_direct, pdc_ptc_closed_form, renewal_quantities_mc};
use crate::model::{ChangePoint, Density, Scenario, SensorModel};
use crate::sim::{paired_paths, run_batch, run_once, run_seed, sensor_rng, RunConfig};

const MC_RUNS: usize = 10_000;
const Z_BAND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// Needs a commensurable discrete model.
    Oracle,
    MonteCarlo,
}

pub struct Check {
    pub name: &'static str,
    pub kind: CheckKind,
    pub description: &'static str,
    run: fn(&Subject) -> Result<Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

impl Outcome {
    fn band(what: &str, a: f64, b: f64, se: f64) -> Outcome {
        let msg = format!(
            "{what}: {a:.6} vs {b:.6}, |diff| = {:.3e}, 3 s.e. = {:.3e}",
            (a - b).abs(),
            Z_BAND * se
        );
        if (a - b).abs() <= Z_BAND * se {
            Outcome::Pass(msg)
        } else {
            Outcome::Fail(msg)
        }
    }

    fn and(self, other: Outcome) -> Outcome {
        match (self, other) {
            (Outcome::Pass(a), Outcome::Pass(b)) => Outcome::Pass(format!("{a}; {b}")),
            (Outcome::Fail(a), Outcome::Pass(b)) | (Outcome::Pass(b), Outcome::Fail(a)) => {
                Outcome::Fail(format!("{a}; {b}"))
            }
            (Outcome::Fail(a), Outcome::Fail(b)) => Outcome::Fail(format!("{a}; {b}")),
            (s @ Outcome::Skip(_), _) | (_, s @ Outcome::Skip(_)) => s,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Pass(m) => write!(f, "PASS  {m}"),
            Outcome::Fail(m) => write!(f, "FAIL  {m}"),
            Outcome::Skip(m) => write!(f, "SKIP  {m}"),
        }
    }
}

/// Sensor model and single-sensor threshold under test.
pub struct Subject {
    pub model: SensorModel,
    pub threshold: f64,
    pub seed: u64,
    lattice: std::result::Result<LatticeModel, String>,
}

impl Subject {
    pub fn new(model: SensorModel, threshold: f64, seed: u64) -> Self {
        let lattice = match lattice_build(&model, threshold) {
            Ok(lm) => Ok(lm),
            Err(Error::Incommensurable(m)) => Err(format!("model is incommensurable ({m})")),
            Err(e) => Err(format!("no lattice for this model ({e})")),
        };
        Subject {
            model,
            threshold,
            seed,
            lattice,
        }
    }

    /// Bernoulli(0.2) to Bernoulli(0.8) with `mu` half an LLR step, `h` two
    /// steps and threshold 3.25 steps.
    pub fn default_bernoulli(seed: u64) -> Result<Self> {
        let model = default_bernoulli_model()?;
        let l = model.llr_table().expect("discrete")[1];
        Ok(Subject::new(model, 3.25 * l, seed))
    }
}

pub fn default_bernoulli_model() -> Result<SensorModel> {
    let pre = Density::discrete(vec![0.0, 1.0], vec![0.8, 0.2])?;
    let post = Density::discrete(vec![0.0, 1.0], vec![0.2, 0.8])?;
    let l = SensorModel::new(pre.clone(), post.clone(), 1.0, 0.0, 0.0)?
        .llr_table()
        .expect("discrete")[1];
    SensorModel::new(pre, post, 0.5 * l, 2.0 * l, 0.0)
}

pub fn checks() -> &'static [Check] {
    &[
        Check {
            name: "dominance",
            kind: CheckKind::MonteCarlo,
            description: "CuSum >= DE-CuSum at every slot of paired sample paths",
            run: check_dominance,
        },
        Check {
            name: "h0-reduction",
            kind: CheckKind::MonteCarlo,
            description: "h = 0, D = 0 DE-Censor-Max/Sum equal CuSum max/sum fusion run by run",
            run: check_reduction,
        },
        Check {
            name: "skip-bound",
            kind: CheckKind::MonteCarlo,
            description: "consecutive skipped slots never exceed ceil(h/mu) + 1",
            run: check_skip_bound,
        },
        Check {
            name: "renewal-vs-direct",
            kind: CheckKind::MonteCarlo,
            description: "renewal PDC/PTC formulas match long-run simulated fractions",
            run: check_renewal_direct,
        },
        Check {
            name: "threshold-independence",
            kind: CheckKind::MonteCarlo,
            description:
                "sample and transmission counters agree across fusion thresholds on paired seeds",
            run: check_threshold_independence,
        },
        Check {
            name: "oracle-mean-stop",
            kind: CheckKind::Oracle,
            description: "lattice E[tau] matches the simulated single-sensor mean stop slot",
            run: check_oracle_mean_stop,
        },
        Check {
            name: "oracle-renewal",
            kind: CheckKind::Oracle,
            description: "lattice PDC/PTC match the simulated renewal estimates",
            run: check_oracle_renewal,
        },
        Check {
            name: "oracle-enumeration",
            kind: CheckKind::Oracle,
            description:
                "lattice CuSum E[tau] matches forward path enumeration for thresholds up to 6 steps",
            run: check_oracle_enumeration,
        },
    ]
}

/// Runs every check in order, returning `(name, outcome)` pairs.
pub fn run_checks(subject: &Subject) -> Vec<(&'static str, Outcome)> {
    checks()
        .iter()
        .map(|c| {
            let outcome = match (&subject.lattice, c.kind) {
                (Err(why), CheckKind::Oracle) => {
                    Outcome::Skip(format!("{why}; oracle check not run"))
                }
                _ => (c.run)(subject).unwrap_or_else(|e| Outcome::Fail(format!("error: {e}"))),
            };
            (c.name, outcome)
        })
        .collect()
}

fn lattice(s: &Subject) -> &LatticeModel {
    s.lattice
        .as_ref()
        .expect("oracle checks run only with a lattice")
}

fn check_dominance(s: &Subject) -> Result<Outcome> {
    for i in 0..200 {
        let path = paired_paths(&s.model, ChangePoint::At(1000), 2000, run_seed(s.seed, i));
        if let Some(p) = path.iter().find(|p| p.cusum < p.decusum) {
            return Ok(Outcome::Fail(format!(
                "run {i}, slot {}: C = {} < W = {}",
                p.slot, p.cusum, p.decusum
            )));
        }
    }
    Ok(Outcome::Pass("200 paths of 2000 slots".into()))
}

/// CuSum max/sum fusion run directly on the sensor streams.
fn cusum_fusion_stop(
    scenario: &Scenario,
    sum: bool,
    a: f64,
    cap: u64,
    seed: u64,
) -> (u64, Vec<f64>) {
    let mut rngs: Vec<_> = (0..scenario.len()).map(|l| sensor_rng(seed, l)).collect();
    let mut c = vec![0.0f64; scenario.len()];
    for n in 1..=cap {
        for (l, m) in scenario.sensors().iter().enumerate() {
            let post = scenario.is_affected(l) && scenario.change_point().is_post(n);
            c[l] = (c[l] + m.draw(post, &mut rngs[l]).llr).max(0.0);
        }
        let stat = if sum {
            c.iter().sum::<f64>()
        } else {
            c.iter().copied().fold(0.0, f64::max)
        };
        if stat > a {
            return (n, c);
        }
    }
    (cap, c)
}

fn check_reduction(s: &Subject) -> Result<Outcome> {
    let m0 = s.model.with_params(s.model.mu(), 0.0, 0.0)?;
    let scenario = Scenario::identical(m0, 3, vec![0], ChangePoint::At(50))?;
    for (rule, sum) in [(FusionRule::Max, false), (FusionRule::Sum, true)] {
        let a = s.threshold;
        let cfg = RunConfig::new(
            scenario.clone(),
            FusionPolicy::new(rule, a)?,
            100_000,
            s.seed,
        )?;
        for i in 0..500 {
            let seed = run_seed(s.seed, i);
            let t = run_once(&cfg.with_seed(seed));
            let (stop, c) = cusum_fusion_stop(&scenario, sum, a, cfg.cap, seed);
            let finals: Vec<f64> = t.sensors.iter().map(|c| c.final_w).collect();
            let same = t.stop_slot == stop
                && finals
                    .iter()
                    .zip(&c)
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                return Ok(Outcome::Fail(format!(
                    "{} run {i}: stop {} vs CuSum {stop}, statistics {finals:?} vs {c:?}",
                    rule.label(),
                    t.stop_slot
                )));
            }
        }
    }
    Ok(Outcome::Pass(
        "500 runs each for max and sum, bitwise equal".into(),
    ))
}

fn check_skip_bound(s: &Subject) -> Result<Outcome> {
    let Some(bound) = max_consecutive_skips(&s.model) else {
        return Ok(Outcome::Skip("h is infinite; no skip bound".into()));
    };
    let scenario = Scenario::identical(s.model.clone(), 2, vec![], ChangePoint::Never)?;
    let policy = FusionPolicy::new(FusionRule::Sum, 2.0 * s.threshold)?;
    let traces = run_batch(&RunConfig::new(scenario, policy, 100_000, s.seed)?, 1000)?;
    let worst = traces
        .iter()
        .flat_map(|t| t.sensors.iter().map(|c| c.max_skip_run))
        .max()
        .unwrap_or(0);
    let msg = format!("longest skip run {worst}, bound {bound}");
    Ok(if worst <= bound {
        Outcome::Pass(msg)
    } else {
        Outcome::Fail(msg)
    })
}

fn check_renewal_direct(s: &Subject) -> Result<Outcome> {
    let rq = renewal_quantities_mc(&s.model, MC_RUNS, s.seed)?;
    let scenario = Scenario::identical(s.model.clone(), 1, vec![], ChangePoint::Never)?;
    let policy = FusionPolicy::new(FusionRule::Max, f64::INFINITY)?;
    let traces = run_batch(
        &RunConfig::new(scenario, policy, 100_000, s.seed.wrapping_add(1))?,
        100,
    )?;
    let (pdc, ptc) = estimate_pdc_ptc_direct(&traces)?[0];
    Ok(
        Outcome::band("PDC", rq.pdc.value, pdc.value, rq.pdc.pooled_std_err(&pdc)).and(
            Outcome::band("PTC", rq.ptc.value, ptc.value, rq.ptc.pooled_std_err(&ptc)),
        ),
    )
}

fn check_threshold_independence(s: &Subject) -> Result<Outcome> {
    let scenario = Scenario::identical(s.model.clone(), 3, vec![], ChangePoint::Never)?;
    let low = RunConfig::new(
        scenario.clone(),
        FusionPolicy::new(FusionRule::Sum, s.threshold)?,
        100_000,
        s.seed,
    )?;
    for i in 0..300 {
        let seed = run_seed(s.seed, i);
        let t_low = run_once(&low.with_seed(seed));
        // the higher threshold, truncated at the lower one's alarm, sees the same prefix
        let high = RunConfig::new(
            scenario.clone(),
            FusionPolicy::new(FusionRule::Sum, 2.0 * s.threshold)?,
            t_low.stop_slot,
            seed,
        )?;
        let t_high = run_once(&high);
        let same = t_low.sensors.iter().zip(&t_high.sensors).all(|(a, b)| {
            a.samples_pre == b.samples_pre && a.transmissions_pre == b.transmissions_pre
        });
        if !same {
            return Ok(Outcome::Fail(format!(
                "run {i}: counters differ over the first {} slots",
                t_low.stop_slot
            )));
        }
    }
    Ok(Outcome::Pass("300 paired runs".into()))
}

fn check_oracle_mean_stop(s: &Subject) -> Result<Outcome> {
    let exact = exact_mean_stop(lattice(s))?;
    let scenario = Scenario::identical(s.model.clone(), 1, vec![], ChangePoint::Never)?;
    let policy = FusionPolicy::new(FusionRule::Max, s.threshold.max(s.model.d_local()))?;
    let cap = (1000.0 * exact).ceil() as u64;
    let traces = run_batch(&RunConfig::new(scenario, policy, cap, s.seed)?, MC_RUNS)?;
    let mc = Estimate::mean_of(traces.iter().map(|t| t.stop_slot as f64)).expect("nonempty");
    Ok(Outcome::band("E[tau]", exact, mc.value, mc.std_err))
}

fn check_oracle_renewal(s: &Subject) -> Result<Outcome> {
    let (pdc, ptc) = exact_pdc_ptc(lattice(s))?;
    let rq = renewal_quantities_mc(&s.model, MC_RUNS, s.seed)?;
    let (pdc_cf, ptc_cf) = pdc_ptc_closed_form(&s.model, &rq.quantities);
    debug_assert!((pdc_cf - rq.pdc.value).abs() < 1e-9 && (ptc_cf - rq.ptc.value).abs() < 1e-9);
    Ok(
        Outcome::band("PDC", pdc, rq.pdc.value, rq.pdc.std_err).and(Outcome::band(
            "PTC",
            ptc,
            rq.ptc.value,
            rq.ptc.std_err,
        )),
    )
}

/// `E[tau]` of the lattice chain by pushing probability mass forward slot by
/// slot until the surviving mass is negligible.
pub fn enumerate_mean_stop(lm: &LatticeModel) -> f64 {
    let h = lm.h_steps as i64;
    let a = lm.a_steps as i64;
    let width = (h + a + 1) as usize;
    let mut mass = vec![0.0f64; width];
    mass[h as usize] = 1.0;
    let mut mean = 0.0;
    let mut alive: f64 = 1.0;
    while alive > 1e-15 {
        mean += alive;
        let mut next = vec![0.0f64; width];
        for (i, &p) in mass.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let k = i as i64 - h;
            if k >= 0 {
                for (&s, &q) in lm.llr_steps.iter().zip(&lm.probs_pre) {
                    let j = (k + s).max(-h);
                    if j <= a {
                        next[(j + h) as usize] += p * q;
                    }
                }
            } else {
                next[((k + lm.mu_steps as i64).min(0) + h) as usize] += p;
            }
        }
        mass = next;
        alive = mass.iter().sum();
    }
    mean
}

fn check_oracle_enumeration(s: &Subject) -> Result<Outcome> {
    let base = lattice(s);
    let mut worst: f64 = 0.0;
    for a_steps in 1..=6 {
        let lm = LatticeModel {
            h_steps: 0,
            a_steps,
            ..base.clone()
        };
        let exact = exact_mean_stop(&lm)?;
        let enumerated = enumerate_mean_stop(&lm);
        worst = worst.max((exact - enumerated).abs() / enumerated);
    }
    let msg = format!("largest relative gap {worst:.3e} over thresholds 1..=6 steps");
    Ok(if worst <= 1e-9 {
        Outcome::Pass(msg)
    } else {
        Outcome::Fail(msg)
    })
}
