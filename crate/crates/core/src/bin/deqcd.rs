use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use deqcd::commands;
use deqcd::config::Experiment;
use deqcd::error::Error;
use deqcd::report::{render_trace, write_csv, Row};
use deqcd::sim::with_workers;
use deqcd::verify::{checks, run_checks, Outcome, Subject};

const EXIT_VALIDATION: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "deqcd",
    version,
    about = "Data-efficient quickest detection in sensor networks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV output path; defaults to output.csv from the config, else stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    cap: Option<u64>,
    /// Use the closed-form FAR thresholds instead of Monte Carlo calibration.
    #[arg(long, global = true)]
    formula_thresholds: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate FAR, CADD, WADD surrogate, PDC and PTC of the configured policy.
    Metrics {
        /// Also write a paired CuSum / DE-CuSum sample path of sensor 1.
        #[arg(long)]
        trace_dump: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        trace_slots: u64,
    },
    /// CADD of DE-Censor-Max, DE-Censor-Sum and Oracle CuSum against m.
    SweepM,
    /// Calibrate the fusion threshold to the configured FAR target.
    Calibrate,
    /// DE-Censor-Sum against fractional sampling at matched FAR.
    CompareFractional,
    /// Run the oracle cross-checks and invariant suite.
    Verify {
        /// List the checks without running them.
        #[arg(long)]
        list: bool,
    },
}

enum Failure {
    Validation(String),
    Invariant,
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            error!("{msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Invariant) => ExitCode::from(EXIT_INVARIANT),
        Err(Failure::Runtime(msg)) => {
            error!("{msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn load(common: &Common) -> Result<Experiment, Failure> {
    let Some(path) = &common.config else {
        return Err(Failure::Validation("--config is required".into()));
    };
    let mut exp = Experiment::load(path).map_err(|e| Failure::Validation(e.to_string()))?;
    let ex = &mut exp.execution;
    ex.seed = common.seed.unwrap_or(ex.seed);
    ex.runs = common.runs.unwrap_or(ex.runs);
    ex.cap = common.cap.unwrap_or(ex.cap);
    ex.workers = common.workers.or(ex.workers);
    if ex.runs == 0 || ex.cap == 0 || ex.workers == Some(0) {
        return Err(Failure::Validation(
            "runs, cap and workers must be positive".into(),
        ));
    }
    if let Some(out) = &common.out {
        exp.csv = Some(out.clone());
    }
    Ok(exp)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    if let Command::Verify { list } = cli.command {
        return verify(common, list);
    }
    let exp = load(common)?;
    let formula = common.formula_thresholds;
    let rows: Vec<Row> = in_pool(exp.execution.workers, || -> Result<Vec<Row>, Error> {
        match &cli.command {
            Command::Metrics {
                trace_dump,
                trace_slots,
            } => {
                if let Some(path) = trace_dump {
                    std::fs::write(path, render_trace(&commands::cmd_trace(&exp, *trace_slots)))?;
                }
                commands::cmd_metrics(&exp, formula)
            }
            Command::SweepM => commands::cmd_sweep_m(&exp, &exp.m_values, formula),
            Command::Calibrate => commands::cmd_calibrate(&exp),
            Command::CompareFractional => {
                let alphas = if exp.alphas.is_empty() {
                    exp.alpha().into_iter().collect()
                } else {
                    exp.alphas.clone()
                };
                commands::cmd_compare_fractional(&exp, &alphas, formula)
            }
            Command::Verify { .. } => unreachable!("handled above"),
        }
    })??;
    write_csv(&rows, exp.csv.as_deref())?;
    Ok(())
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match workers {
        Some(n) => Ok(with_workers(n, f)?),
        None => Ok(f()),
    }
}

fn verify(common: &Common, list: bool) -> Result<(), Failure> {
    if list {
        for c in checks() {
            println!("{:<24} {:?}  {}", c.name, c.kind, c.description);
        }
        return Ok(());
    }
    let subject = match &common.config {
        Some(_) => {
            let exp = load(common)?;
            let threshold = match exp.threshold {
                deqcd::config::ThresholdSpec::Explicit(a) if a > 0.0 => a,
                _ => 3.0,
            };
            Subject::new(
                exp.scenario.sensors()[0].clone(),
                threshold,
                exp.execution.seed,
            )
        }
        None => Subject::default_bernoulli(common.seed.unwrap_or(0))?,
    };
    let results = in_pool(common.workers, || run_checks(&subject))?;
    let mut failed = false;
    for (name, outcome) in &results {
        println!("{name:<24} {outcome}");
        failed |= matches!(outcome, Outcome::Fail(_));
    }
    if failed {
        Err(Failure::Invariant)
    } else {
        Ok(())
    }
}
