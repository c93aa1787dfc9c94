//! Monte Carlo driver: one run of a full policy (sensor detectors, censoring,
//! fusion) and seeded batches of runs.
//!
//! Randomness is split per `(run, sensor)`: run `i` of a batch uses seed
//! `base ^ i`, and sensor `l` draws from ChaCha8 stream `l` under that seed.
//! The fractional baseline's coins use the separate streams `COIN_STREAM | l`.
//! Observations are only drawn on sampled slots, so a sensor's k-th sampled
//! observation is the same whatever the other sensors or the fusion rule do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::detector::{decusum_should_sample, DetectorState, Uplink};
use crate::error::{bail, Error, Result};
use crate::fusion::{de_all_weights, fusion_decide, FusionPolicy, FusionRule};
use crate::model::{ChangePoint, GaussianDraw, Scenario, SensorModel};

const COIN_STREAM: u64 = 1 << 32;

/// Observation stream of one sensor within one run.
pub fn sensor_rng(run_seed: u64, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(sensor as u64);
    rng
}

fn coin_rng(run_seed: u64, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(COIN_STREAM | sensor as u64);
    rng
}

/// Seed of run `index` in a batch with base seed `base`.
#[inline]
pub fn run_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub policy: FusionPolicy,
    /// Maximum number of slots; a run reaching it is censored.
    pub cap: u64,
    pub seed: u64,
    /// Per-sensor `W_0` (default all zero). Ignored by the CuSum-based baselines.
    pub initial_states: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(scenario: Scenario, policy: FusionPolicy, cap: u64, seed: u64) -> Result<Self> {
        let cfg = RunConfig {
            scenario,
            policy,
            cap,
            seed,
            initial_states: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_initial_states(mut self, states: Vec<f64>) -> Result<Self> {
        self.initial_states = Some(states);
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cap == 0 {
            bail!(Config, "cap must be at least one slot");
        }
        self.policy.validate_for(&self.scenario)?;
        if let Some(states) = &self.initial_states {
            if states.len() != self.scenario.len() {
                bail!(
                    Config,
                    "{} initial states given for {} sensors",
                    states.len(),
                    self.scenario.len()
                );
            }
            for (i, (w, m)) in states.iter().zip(self.scenario.sensors()).enumerate() {
                if !(*w >= -m.h()) || w.is_nan() || w.is_infinite() {
                    bail!(
                        Config,
                        "initial state {w} of sensor {i} is below -h = {}",
                        -m.h()
                    );
                }
            }
        }
        Ok(())
    }
}

/// Per-sensor counters of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorCounters {
    /// Sampled slots before the change (`S_n = 1`, `n < gamma`).
    pub samples_pre: u64,
    pub samples_post: u64,
    /// Transmitting slots before the change (`T_n = 1`, `n < gamma`).
    pub transmissions_pre: u64,
    pub transmissions_post: u64,
    /// Longest run of consecutive skipped slots.
    pub max_skip_run: u64,
    /// Statistic at the stopping slot.
    pub final_w: f64,
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// Alarm slot, or `cap` when censored.
    pub stop_slot: u64,
    pub censored: bool,
    pub change_point: ChangePoint,
    pub seed: u64,
    pub sensors: Vec<SensorCounters>,
}

impl RunTrace {
    /// Number of slots observed before the change.
    pub fn pre_change_slots(&self) -> u64 {
        match self.change_point {
            ChangePoint::At(g) => self.stop_slot.min(g - 1),
            ChangePoint::Never => self.stop_slot,
        }
    }

    /// `tau - gamma` when `tau >= gamma` (for censored runs a lower bound).
    pub fn delay(&self) -> Option<u64> {
        let g = self.change_point.slot()?;
        (self.stop_slot >= g).then(|| self.stop_slot - g)
    }
}

/// Runs one seeded simulation of the configured policy.
///
/// Each slot `n = 1, 2, ...`: every sensor decides to sample or sleep from
/// its own statistic, updates it, and produces an uplink; the fusion center
/// then decides whether to stop.
pub fn run_once(cfg: &RunConfig) -> RunTrace {
    match cfg.policy.rule {
        FusionRule::Max | FusionRule::Sum | FusionRule::All => run_decusum(cfg),
        FusionRule::OracleCusum => run_oracle(cfg),
        FusionRule::FractionalSum { sampling_prob } => run_fractional(cfg, sampling_prob),
    }
}

fn finish(
    cfg: &RunConfig,
    stop_slot: u64,
    censored: bool,
    sensors: Vec<SensorCounters>,
) -> RunTrace {
    RunTrace {
        stop_slot,
        censored,
        change_point: cfg.scenario.change_point(),
        seed: cfg.seed,
        sensors,
    }
}

#[inline]
fn count(counter_pre: &mut u64, counter_post: &mut u64, post: bool) {
    if post {
        *counter_post += 1;
    } else {
        *counter_pre += 1;
    }
}

/// Per-sensor state of a DE-CuSum run.
#[derive(Clone)]
struct Lane<'a> {
    model: &'a SensorModel,
    gaussian: Option<GaussianDraw>,
    rng: ChaCha8Rng,
    state: DetectorState,
    affected: bool,
    /// Transmission happens when `w` exceeds this level.
    level: f64,
    /// DE-All uplinks send a one instead of `w`.
    binary: bool,
    counters: SensorCounters,
    skip_run: u64,
}

impl Lane<'_> {
    /// Advances through `out.len()` slots, all before or all after the
    /// change, writing each slot's uplink value (zero for no transmission).
    fn advance(&mut self, post_slot: bool, out: &mut [f64]) {
        let post_law = post_slot && self.affected;
        match self.gaussian {
            Some(g) => self.advance_with(post_slot, out, |rng| g.draw(post_law, rng).llr),
            None => {
                let model = self.model;
                self.advance_with(post_slot, out, |rng| model.draw(post_law, rng).llr)
            }
        }
    }

    #[inline(always)]
    fn advance_with(
        &mut self,
        post_slot: bool,
        out: &mut [f64],
        mut llr: impl FnMut(&mut ChaCha8Rng) -> f64,
    ) {
        let (h, mu, level, binary) = (self.model.h(), self.model.mu(), self.level, self.binary);
        let mut state = self.state;
        let mut samples = 0u64;
        let mut sent = 0u64;
        let mut run = self.skip_run;
        let mut longest = self.counters.max_skip_run;
        for y in out.iter_mut() {
            let sampled = decusum_should_sample(&state);
            state = if sampled {
                state.sampled(llr(&mut self.rng), h)
            } else {
                state.skipped(mu)
            };
            // the censor / censor_binary maps
            let transmit = state.w > level;
            debug_assert!(
                !transmit || state.w > 0.0,
                "transmission requires a positive statistic"
            );
            *y = if !transmit {
                0.0
            } else if binary {
                1.0
            } else {
                state.w
            };
            samples += u64::from(sampled);
            sent += u64::from(transmit);
            run = if sampled { 0 } else { run + 1 };
            longest = longest.max(run);
        }
        self.state = state;
        self.skip_run = run;
        let c = &mut self.counters;
        c.max_skip_run = longest;
        if post_slot {
            c.samples_post += samples;
            c.transmissions_post += sent;
        } else {
            c.samples_pre += samples;
            c.transmissions_pre += sent;
        }
    }

    /// Advances through slots `first .. first + out.len()`.
    fn advance_span(&mut self, first: u64, change: ChangePoint, out: &mut [f64]) {
        let pre = match change {
            ChangePoint::At(g) => (g.saturating_sub(first) as usize).min(out.len()),
            ChangePoint::Never => out.len(),
        };
        let (before, after) = out.split_at_mut(pre);
        if !before.is_empty() {
            self.advance(false, before);
        }
        if !after.is_empty() {
            self.advance(true, after);
        }
    }
}

const FIRST_BLOCK: usize = 16;
const MAX_BLOCK: usize = 512;

/// DE-CuSum sensors with censoring and max, sum or all-of fusion.
///
/// Slots are processed in blocks: every sensor first advances through the
/// block on its own, then the fusion rule scans the block slot by slot.
/// Sensors never read each other's state, so this matches a slot-by-slot
/// simulation exactly. On an alarm the sensors are replayed from the start
/// of the block up to the alarm slot.
fn run_decusum(cfg: &RunConfig) -> RunTrace {
    let scenario = &cfg.scenario;
    let change = scenario.change_point();
    let policy = &cfg.policy;
    let levels: Option<Vec<f64>> = (policy.rule == FusionRule::All).then(|| {
        de_all_weights(scenario)
            .into_iter()
            .map(|d| d * policy.threshold_a)
            .collect()
    });
    let mut lanes: Vec<Lane> = scenario
        .sensors()
        .iter()
        .enumerate()
        .map(|(l, model)| Lane {
            model,
            gaussian: model.gaussian_draw(),
            rng: sensor_rng(cfg.seed, l),
            state: cfg
                .initial_states
                .as_ref()
                .map_or_else(DetectorState::default, |ws| {
                    DetectorState::starting_at(ws[l])
                }),
            affected: scenario.is_affected(l),
            level: levels.as_ref().map_or(model.d_local(), |v| v[l]),
            binary: levels.is_some(),
            counters: SensorCounters::default(),
            skip_run: 0,
        })
        .collect();
    let len = lanes.len();
    let a = policy.threshold_a;
    let mut values = vec![0.0f64; len * MAX_BLOCK];
    let mut fused = vec![0.0f64; MAX_BLOCK];
    let mut saved: Vec<Lane> = lanes.clone();

    let mut first = 1u64;
    let mut block = FIRST_BLOCK;
    while first <= cfg.cap {
        let b = block.min((cfg.cap - first + 1) as usize);
        saved.clone_from_slice(&lanes);
        for (l, lane) in lanes.iter_mut().enumerate() {
            lane.advance_span(first, change, &mut values[l * MAX_BLOCK..l * MAX_BLOCK + b]);
        }

        // fusion statistic per slot, with the rules of `fusion_decide`
        let fused = &mut fused[..b];
        fused.fill(if policy.rule == FusionRule::Max {
            f64::NEG_INFINITY
        } else {
            0.0
        });
        for l in 0..len {
            let v = &values[l * MAX_BLOCK..l * MAX_BLOCK + b];
            match policy.rule {
                FusionRule::Max => fused.iter_mut().zip(v).for_each(|(f, x)| *f = f.max(*x)),
                FusionRule::Sum => fused.iter_mut().zip(v).for_each(|(f, x)| *f += *x),
                _ => fused
                    .iter_mut()
                    .zip(v)
                    .for_each(|(f, x)| *f += f64::from(u8::from(*x == 1.0))),
            }
        }
        let alarm = match policy.rule {
            FusionRule::Max | FusionRule::Sum => fused.iter().position(|f| *f > a),
            _ => fused.iter().position(|f| *f == len as f64),
        };
        if let Some(i) = alarm {
            for (l, lane) in saved.iter_mut().enumerate() {
                lane.advance_span(
                    first,
                    change,
                    &mut values[l * MAX_BLOCK..l * MAX_BLOCK + i + 1],
                );
            }
            return finish(cfg, first + i as u64, false, lane_counters(saved));
        }
        first += b as u64;
        block = (2 * block).min(MAX_BLOCK);
    }
    finish(cfg, cfg.cap, true, lane_counters(lanes))
}

fn lane_counters(lanes: Vec<Lane>) -> Vec<SensorCounters> {
    lanes
        .into_iter()
        .map(|lane| SensorCounters {
            final_w: lane.state.w,
            ..lane.counters
        })
        .collect()
}

fn with_final<T>(
    mut counters: Vec<SensorCounters>,
    states: &[T],
    w: impl Fn(&T) -> f64,
) -> Vec<SensorCounters> {
    for (c, s) in counters.iter_mut().zip(states) {
        c.final_w = w(s);
    }
    counters
}

fn run_oracle(cfg: &RunConfig) -> RunTrace {
    let scenario = &cfg.scenario;
    let sensors = scenario.sensors();
    let change = scenario.change_point();
    let affected = scenario.affected();
    let mut rngs: Vec<ChaCha8Rng> = affected.iter().map(|&k| sensor_rng(cfg.seed, k)).collect();
    let mut counters = vec![SensorCounters::default(); sensors.len()];
    let mut c = 0.0f64;
    let mut uplink = [Uplink::Null];

    for n in 1..=cfg.cap {
        let post_slot = change.is_post(n);
        let mut llr = 0.0;
        for (rng, &k) in rngs.iter_mut().zip(affected) {
            llr += sensors[k].draw(post_slot, rng).llr;
            let ck = &mut counters[k];
            count(&mut ck.samples_pre, &mut ck.samples_post, post_slot);
            count(
                &mut ck.transmissions_pre,
                &mut ck.transmissions_post,
                post_slot,
            );
        }
        c = (c + llr).max(0.0);
        uplink[0] = Uplink::Value(c);
        if fusion_decide(&cfg.policy, &uplink) {
            return finish(cfg, n, false, oracle_final(counters, affected, c));
        }
    }
    finish(cfg, cfg.cap, true, oracle_final(counters, affected, c))
}

fn oracle_final(
    mut counters: Vec<SensorCounters>,
    affected: &[usize],
    c: f64,
) -> Vec<SensorCounters> {
    for &k in affected {
        counters[k].final_w = c;
    }
    counters
}

fn run_fractional(cfg: &RunConfig, sampling_prob: f64) -> RunTrace {
    let scenario = &cfg.scenario;
    let sensors = scenario.sensors();
    let len = sensors.len();
    let change = scenario.change_point();
    let mut rngs: Vec<ChaCha8Rng> = (0..len).map(|l| sensor_rng(cfg.seed, l)).collect();
    let mut coins: Vec<ChaCha8Rng> = (0..len).map(|l| coin_rng(cfg.seed, l)).collect();
    let mut counters = vec![SensorCounters::default(); len];
    let mut skip_run = vec![0u64; len];
    let mut cusum = vec![0.0f64; len];
    let mut uplinks = vec![Uplink::Value(0.0); len];

    for n in 1..=cfg.cap {
        let post_slot = change.is_post(n);
        for l in 0..len {
            let c = &mut counters[l];
            if coins[l].random::<f64>() < sampling_prob {
                let draw = sensors[l].draw(post_slot && scenario.is_affected(l), &mut rngs[l]);
                cusum[l] = (cusum[l] + draw.llr).max(0.0);
                // the fusion center keeps the last received value until the next sample
                uplinks[l] = Uplink::Value(cusum[l]);
                count(&mut c.samples_pre, &mut c.samples_post, post_slot);
                count(
                    &mut c.transmissions_pre,
                    &mut c.transmissions_post,
                    post_slot,
                );
                skip_run[l] = 0;
            } else {
                skip_run[l] += 1;
                c.max_skip_run = c.max_skip_run.max(skip_run[l]);
            }
        }
        if fusion_decide(&cfg.policy, &uplinks) {
            return finish(cfg, n, false, with_final(counters, &cusum, |c| *c));
        }
    }
    finish(cfg, cfg.cap, true, with_final(counters, &cusum, |c| *c))
}

/// Runs `runs` independent simulations; run `i` uses seed `cfg.seed ^ i`.
///
/// Executes on the current rayon pool; the output order is the run index
/// order, so results do not depend on the worker count.
pub fn run_batch(cfg: &RunConfig, runs: usize) -> Result<Vec<RunTrace>> {
    if runs == 0 {
        bail!(Domain, "a batch needs at least one run");
    }
    Ok((0..runs)
        .into_par_iter()
        .map(|i| run_once(&cfg.with_seed(run_seed(cfg.seed, i))))
        .collect())
}

/// Batch of fractional-sampling baseline runs.
pub fn run_fractional_baseline(cfg: &RunConfig, runs: usize) -> Result<Vec<RunTrace>> {
    if !matches!(cfg.policy.rule, FusionRule::FractionalSum { .. }) {
        bail!(
            Config,
            "fractional baseline needs the fractional_sum rule, got {}",
            cfg.policy.rule
        );
    }
    run_batch(cfg, runs)
}

/// True if the batch's mean stop slot (censored runs counted at the cap)
/// reaches `target_mean`.
///
/// Runs are processed in index order in fixed-size chunks and the scan stops
/// as soon as the running total already guarantees the answer, so the result
/// equals a full-batch evaluation but costs at most about `runs * target_mean` slots.
pub fn mean_stop_reaches(cfg: &RunConfig, runs: usize, target_mean: f64) -> bool {
    const CHUNK: usize = 64;
    let needed = target_mean * runs as f64;
    let mut total = 0.0;
    let mut start = 0;
    while start < runs {
        let end = (start + CHUNK).min(runs);
        total += (start..end)
            .into_par_iter()
            .map(|i| run_once(&cfg.with_seed(run_seed(cfg.seed, i))).stop_slot as f64)
            .collect::<Vec<_>>()
            .into_iter()
            .sum::<f64>();
        if total >= needed {
            return true;
        }
        start = end;
    }
    false
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// One slot of a paired CuSum / DE-CuSum sample path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub slot: u64,
    pub sampled: bool,
    pub observation: f64,
    pub cusum: f64,
    pub decusum: f64,
}

/// CuSum and DE-CuSum driven by one full pre/post observation sequence of a
/// single sensor; the DE-CuSum uses slot `n`'s observation only when it samples.
pub fn paired_paths(
    model: &SensorModel,
    change: ChangePoint,
    slots: u64,
    seed: u64,
) -> Vec<PathPoint> {
    let mut rng = sensor_rng(seed, 0);
    let mut c = 0.0f64;
    let mut state = DetectorState::default();
    (1..=slots)
        .map(|n| {
            let draw = model.draw(change.is_post(n), &mut rng);
            c = (c + draw.llr).max(0.0);
            let sampled = decusum_should_sample(&state);
            state = if sampled {
                state.sampled(draw.llr, model.h())
            } else {
                state.skipped(model.mu())
            };
            PathPoint {
                slot: n,
                sampled,
                observation: draw.x,
                cusum: c,
                decusum: state.w,
            }
        })
        .collect()
}
