//! Experiment configuration files (TOML) and their validation.
//!
//! Parsing is strict: unknown keys are errors, and every semantic check runs
//! in [`Experiment::from_toml`] so a bad file fails before any simulation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{bail, Error, Result};
use crate::fusion::FusionRule;
use crate::metrics::mu_for_pdc_target;
use crate::model::{ChangePoint, Density, Scenario, SensorModel};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    experiment: RawExperiment,
    scenario: RawScenario,
    policy: RawPolicy,
    #[serde(default)]
    execution: RawExecution,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    name: String,
}

impl Default for RawExperiment {
    fn default() -> Self {
        RawExperiment {
            name: "experiment".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    sensors: usize,
    affected: Option<Vec<usize>>,
    m: Option<usize>,
    change_point: Option<RawChangePoint>,
    sensor: RawSensor,
    #[serde(default, rename = "override")]
    overrides: Vec<RawOverride>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawChangePoint {
    Slot(u64),
    Word(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
enum RawDensity {
    Gaussian { mean: f64, variance: f64 },
    Discrete { support: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    pre: RawDensity,
    post: RawDensity,
    h: f64,
    d_local: f64,
    mu: Option<f64>,
    beta: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverride {
    index: usize,
    pre: Option<RawDensity>,
    post: Option<RawDensity>,
    h: Option<f64>,
    d_local: Option<f64>,
    mu: Option<f64>,
    beta: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    rule: String,
    alpha: Option<f64>,
    threshold: Option<f64>,
    sampling_prob: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExecution {
    runs: Option<usize>,
    cap: Option<u64>,
    seed: Option<u64>,
    workers: Option<usize>,
    calibration_runs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    m_values: Option<Vec<usize>>,
    alphas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<PathBuf>,
}

pub const DEFAULT_RUNS: usize = 5000;
pub const DEFAULT_CAP: u64 = 1_000_000;
pub const DEFAULT_CALIBRATION_RUNS: usize = 2000;

/// How a sensor's sleep credit was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSource {
    Explicit,
    /// Solved from a duty-cycle target with the `h = inf` approximation.
    FromBeta(f64),
}

/// How the fusion threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Explicit(f64),
    /// FAR target; resolved by formula or Monte Carlo calibration.
    Alpha(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub runs: usize,
    pub cap: u64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub calibration_runs: usize,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    /// Scenario with the configured affected set and change point.
    pub scenario: Scenario,
    pub mu_sources: Vec<MuSource>,
    /// Per-sensor transmission-cost targets, when given.
    pub sigma: Vec<Option<f64>>,
    pub rule: FusionRule,
    pub threshold: ThresholdSpec,
    pub execution: Execution,
    pub m_values: Vec<usize>,
    pub alphas: Vec<f64>,
    pub csv: Option<PathBuf>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Experiment::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        resolve(raw)
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.threshold {
            ThresholdSpec::Alpha(a) => Some(a),
            ThresholdSpec::Explicit(_) => None,
        }
    }

    /// Same experiment with the first `m` sensors affected.
    pub fn scenario_with_m(&self, m: usize) -> Result<Scenario> {
        if m == 0 || m > self.scenario.len() {
            bail!(Config, "m = {m} must lie in 1..={}", self.scenario.len());
        }
        self.scenario.with_affected((0..m).collect())
    }
}

fn density(raw: &RawDensity) -> Result<Density> {
    match raw {
        RawDensity::Gaussian { mean, variance } => Density::gaussian(*mean, *variance),
        RawDensity::Discrete { support, probs } => {
            Density::discrete(support.clone(), probs.clone())
        }
    }
}

fn resolve(raw: RawConfig) -> Result<Experiment> {
    let name = raw.experiment.name;
    if name.is_empty() || name.contains([',', '"', '\n', '\r']) {
        bail!(
            Config,
            "experiment name must be nonempty without commas, quotes or newlines"
        );
    }

    let sc = raw.scenario;
    let l = sc.sensors;
    if l == 0 {
        bail!(Config, "scenario.sensors must be at least 1");
    }
    let mut specs = vec![sc.sensor.clone(); l];
    let mut seen = vec![false; l];
    for o in &sc.overrides {
        if o.index == 0 || o.index > l {
            bail!(Config, "override index {} outside 1..={l}", o.index);
        }
        if std::mem::replace(&mut seen[o.index - 1], true) {
            bail!(Config, "sensor {} overridden twice", o.index);
        }
        let s = &mut specs[o.index - 1];
        if let Some(v) = &o.pre {
            s.pre = v.clone();
        }
        if let Some(v) = &o.post {
            s.post = v.clone();
        }
        s.h = o.h.unwrap_or(s.h);
        s.d_local = o.d_local.unwrap_or(s.d_local);
        // mu and beta are alternatives, so setting one clears the other
        if o.mu.is_some() || o.beta.is_some() {
            s.mu = o.mu;
            s.beta = o.beta;
        }
        s.sigma = o.sigma.or(s.sigma);
    }

    let mut sensors = Vec::with_capacity(l);
    let mut mu_sources = Vec::with_capacity(l);
    let mut sigma = Vec::with_capacity(l);
    for (i, s) in specs.iter().enumerate() {
        let ctx = |e: Error| Error::Config(format!("sensor {}: {e}", i + 1));
        let pre = density(&s.pre).map_err(ctx)?;
        let post = density(&s.post).map_err(ctx)?;
        let (mu, source) = match (s.mu, s.beta) {
            (Some(mu), None) => (mu, MuSource::Explicit),
            (None, Some(beta)) => {
                let kl = crate::model::kl_divergence(&pre, &post).map_err(ctx)?;
                (
                    mu_for_pdc_target(beta, kl).map_err(ctx)?,
                    MuSource::FromBeta(beta),
                )
            }
            _ => bail!(Config, "sensor {}: give exactly one of mu and beta", i + 1),
        };
        if let Some(sg) = s.sigma {
            if !(sg > 0.0 && sg <= 1.0) {
                bail!(
                    Config,
                    "sensor {}: sigma must lie in (0, 1], got {sg}",
                    i + 1
                );
            }
        }
        sensors.push(SensorModel::new(pre, post, mu, s.h, s.d_local).map_err(ctx)?);
        mu_sources.push(source);
        sigma.push(s.sigma);
    }

    let change_point = match sc.change_point {
        None => ChangePoint::At(1),
        Some(RawChangePoint::Slot(0)) => bail!(Config, "change_point must be at least 1"),
        Some(RawChangePoint::Slot(g)) => ChangePoint::At(g),
        Some(RawChangePoint::Word(w)) if w == "never" => ChangePoint::Never,
        Some(RawChangePoint::Word(w)) => bail!(
            Config,
            "change_point must be a slot or \"never\", got {w:?}"
        ),
    };
    let affected = match (sc.affected, sc.m) {
        (Some(list), None) => {
            if list.iter().any(|&k| k == 0 || k > l) {
                bail!(Config, "affected indices must lie in 1..={l}");
            }
            list.into_iter().map(|k| k - 1).collect()
        }
        (None, Some(m)) => {
            if m > l {
                bail!(Config, "m = {m} exceeds the {l} sensors");
            }
            (0..m).collect()
        }
        (None, None) => Vec::new(),
        (Some(_), Some(_)) => bail!(
            Config,
            "give at most one of scenario.affected and scenario.m"
        ),
    };
    let scenario =
        Scenario::new(sensors, affected, change_point).map_err(|e| Error::Config(e.to_string()))?;

    let p = raw.policy;
    let rule = match p.rule.as_str() {
        "max" => FusionRule::Max,
        "sum" => FusionRule::Sum,
        "all" => FusionRule::All,
        "oracle_cusum" => FusionRule::OracleCusum,
        "fractional_sum" => FusionRule::FractionalSum {
            sampling_prob: p
                .sampling_prob
                .ok_or_else(|| Error::Config("fractional_sum needs policy.sampling_prob".into()))?,
        },
        other => bail!(
            Config,
            "unknown rule {other:?}; expected max, sum, all, oracle_cusum or fractional_sum"
        ),
    };
    if let FusionRule::FractionalSum { sampling_prob } = rule {
        if !(sampling_prob > 0.0 && sampling_prob <= 1.0) {
            bail!(
                Config,
                "sampling_prob must lie in (0, 1], got {sampling_prob}"
            );
        }
    } else if p.sampling_prob.is_some() {
        bail!(Config, "sampling_prob only applies to fractional_sum");
    }
    let threshold = match (p.alpha, p.threshold) {
        (Some(a), None) => {
            check_alpha(a)?;
            ThresholdSpec::Alpha(a)
        }
        (None, Some(t)) => {
            if !(t >= 0.0 && t.is_finite()) {
                bail!(Config, "threshold must be nonnegative and finite, got {t}");
            }
            ThresholdSpec::Explicit(t)
        }
        _ => bail!(
            Config,
            "give exactly one of policy.alpha and policy.threshold"
        ),
    };
    if let ThresholdSpec::Explicit(t) = threshold {
        crate::fusion::FusionPolicy::new(rule, t)
            .and_then(|pol| pol.validate_for(&scenario))
            .map_err(|e| Error::Config(e.to_string()))?;
    }

    let ex = raw.execution;
    let execution = Execution {
        runs: ex.runs.unwrap_or(DEFAULT_RUNS),
        cap: ex.cap.unwrap_or(DEFAULT_CAP),
        seed: ex.seed.unwrap_or(0),
        workers: ex.workers,
        calibration_runs: ex.calibration_runs.unwrap_or(DEFAULT_CALIBRATION_RUNS),
    };
    if execution.runs == 0 || execution.cap == 0 || execution.workers == Some(0) {
        bail!(Config, "runs, cap and workers must be positive");
    }
    if execution.calibration_runs < 100 {
        bail!(Config, "calibration_runs must be at least 100");
    }

    let m_values = raw.sweep.m_values.unwrap_or_default();
    if let Some(&m) = m_values.iter().find(|&&m| m == 0 || m > l) {
        bail!(Config, "sweep m = {m} must lie in 1..={l}");
    }
    let alphas = raw.sweep.alphas.unwrap_or_default();
    for &a in &alphas {
        check_alpha(a)?;
    }

    Ok(Experiment {
        name,
        scenario,
        mu_sources,
        sigma,
        rule,
        threshold,
        execution,
        m_values,
        alphas,
        csv: raw.output.csv,
    })
}

fn check_alpha(a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        bail!(Config, "FAR target alpha must lie in (0, 1), got {a}");
    }
    Ok(())
}
