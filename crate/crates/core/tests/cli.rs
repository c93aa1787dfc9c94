use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deqcd::report::{CSV_HEADER, TRACE_HEADER};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn deqcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deqcd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = r#"
[experiment]
name = "small"

[scenario]
sensors = 3
m = 2

[scenario.sensor]
pre = { family = "gaussian", mean = 0.0, variance = 1.0 }
post = { family = "gaussian", mean = 0.5, variance = 1.0 }
h = 4.0
d_local = 0.0
mu = 0.125

[policy]
rule = "sum"
threshold = 6.0

[execution]
runs = 200
seed = 3
"#;

fn write_config(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_list_names_every_check() {
    let o = deqcd(&["verify", "--list"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for name in [
        "dominance",
        "h0-reduction",
        "skip-bound",
        "renewal-vs-direct",
        "oracle-mean-stop",
    ] {
        assert!(out.contains(name), "{out}");
    }
    assert!(!out.contains("PASS"));
}

#[test]
fn default_verify_passes() {
    let o = deqcd(&["verify"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(!out.contains("FAIL"), "{out}");
    assert!(!out.contains("SKIP"), "{out}");
}

#[test]
fn verify_skips_oracle_checks_for_incommensurable_model() {
    let cfg = configs().join("bernoulli_incommensurable.toml");
    let o = deqcd(&["verify", "--config", cfg.to_str().unwrap()]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    let skipped: Vec<&str> = out.lines().filter(|l| l.contains("SKIP")).collect();
    assert!(
        skipped
            .iter()
            .all(|l| l.starts_with("oracle") && l.contains("incommensurable")),
        "{out}"
    );
    assert!(!skipped.is_empty());
    assert!(
        out.lines()
            .any(|l| l.starts_with("dominance") && l.contains("PASS")),
        "{out}"
    );
}

#[test]
fn verify_runs_oracle_checks_on_config_model() {
    let cfg = configs().join("bernoulli_verify.toml");
    let o = deqcd(&["verify", "--config", cfg.to_str().unwrap()]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(!out.contains("SKIP"), "{out}");
}

#[test]
fn metrics_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let trace = dir.path().join("trace.csv");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = deqcd(&[
            "metrics",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
            "--trace-dump",
            trace.to_str().unwrap(),
            "--trace-slots",
            "50",
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let metrics: Vec<&str> = lines.map(|l| l.split(',').nth(6).unwrap()).collect();
    for m in [
        "threshold_explicit",
        "mu_explicit",
        "far",
        "cadd",
        "wadd_surrogate",
        "pdc",
        "ptc",
    ] {
        assert!(metrics.contains(&m), "{metrics:?}");
    }
    assert!(!metrics.iter().any(|m| m.starts_with("calibrat")));

    let trace = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(trace.lines().next(), Some(TRACE_HEADER));
    assert_eq!(trace.lines().count(), 51);
}

#[test]
fn calibrate_reports_both_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("threshold = 6.0", "alpha = 2e-2")
        .replace("seed = 3", "seed = 3\ncalibration_runs = 200");
    let cfg = write_config(&dir, "cal.toml", &text);
    let o = deqcd(&["calibrate", "--config", &cfg]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    let value = |metric: &str| -> f64 {
        let line = out
            .lines()
            .find(|l| l.split(',').nth(6) == Some(metric))
            .unwrap();
        line.split(',').nth(8).unwrap().parse().unwrap()
    };
    assert!(value("threshold_calibrated") <= value("threshold_formula"));
    assert!(value("far") <= 2e-2);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(
        &dir,
        "unknown.toml",
        &SMALL.replace("[policy]", "[policy]\nthreshhold = 3.0"),
    );
    let too_many = write_config(&dir, "m.toml", &SMALL.replace("m = 2", "m = 4"));
    let both = write_config(
        &dir,
        "both.toml",
        &SMALL.replace("threshold = 6.0", "threshold = 6.0\nalpha = 0.01"),
    );
    let zero_beta = write_config(
        &dir,
        "beta.toml",
        &SMALL.replace("mu = 0.125", "beta = 0.0"),
    );
    let sweep = write_config(
        &dir,
        "sweep.toml",
        &format!(
            "{}\n[sweep]\nm_values = [1, 9]\n",
            SMALL.replace("threshold = 6.0", "alpha = 0.01")
        ),
    );
    for args in [
        vec!["metrics", "--config", &unknown],
        vec!["metrics", "--config", &too_many],
        vec!["metrics", "--config", &both],
        vec!["metrics", "--config", &zero_beta],
        vec!["sweep-m", "--config", &sweep],
        vec!["metrics", "--config", "/nonexistent/deqcd.toml"],
        vec!["metrics"],
        vec!["metrics", "--config", &unknown, "--runs", "0"],
        vec!["no-such-command"],
    ] {
        let o = deqcd(&args);
        assert_eq!(
            o.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(o.stdout.is_empty(), "{args:?} printed CSV before failing");
    }
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(deqcd(&["--help"]).status.code(), Some(0));
    assert_eq!(deqcd(&["--version"]).status.code(), Some(0));
}
