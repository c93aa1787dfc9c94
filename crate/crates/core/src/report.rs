//! CSV output shared by every subcommand.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::estimate::Estimate;
use crate::sim::PathPoint;

pub const CSV_HEADER: &str =
    "experiment,policy,L,m,alpha,A,metric,sensor,value,half_width,runs,seed";

pub const TRACE_HEADER: &str = "slot,sampled,observation,cusum,decusum";

/// Target of a metric row: the whole network or one sensor (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SensorKey {
    All,
    Sensor(usize),
}

impl std::fmt::Display for SensorKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SensorKey::All => f.write_str("all"),
            SensorKey::Sensor(i) => write!(f, "{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub experiment: String,
    pub policy: String,
    pub l: usize,
    pub m: usize,
    /// FAR target; `None` when the threshold was given explicitly.
    pub alpha: Option<f64>,
    pub a: f64,
    pub metric: String,
    pub sensor: SensorKey,
    pub value: f64,
    pub half_width: f64,
    pub runs: usize,
    pub seed: u64,
}

/// Row fields shared by every metric of one policy evaluation.
#[derive(Debug, Clone)]
pub struct RowContext {
    pub experiment: String,
    pub policy: String,
    pub l: usize,
    pub m: usize,
    pub alpha: Option<f64>,
    pub a: f64,
    pub runs: usize,
    pub seed: u64,
}

impl RowContext {
    pub fn row(&self, metric: &str, sensor: SensorKey, est: Estimate) -> Row {
        Row {
            experiment: self.experiment.clone(),
            policy: self.policy.clone(),
            l: self.l,
            m: self.m,
            alpha: self.alpha,
            a: self.a,
            metric: metric.to_string(),
            sensor,
            value: est.value,
            half_width: est.half_width(),
            runs: self.runs,
            seed: self.seed,
        }
    }
}

/// `printf("%.9g")`.
pub fn fmt_g9(v: f64) -> String {
    const P: i32 = 9;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Sorts rows by `(m, policy, metric, sensor)`; ties keep insertion order.
pub fn sort_rows(rows: &mut [Row]) {
    rows.sort_by(|x, y| {
        x.m.cmp(&y.m)
            .then_with(|| x.policy.cmp(&y.policy))
            .then_with(|| x.metric.cmp(&y.metric))
            .then_with(|| x.sensor.cmp(&y.sensor))
    });
}

/// Sorted CSV text including the header.
pub fn render_csv(rows: &[Row]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &rows {
        let alpha = r.alpha.map_or_else(|| "nan".to_string(), fmt_g9);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.policy,
            r.l,
            r.m,
            alpha,
            fmt_g9(r.a),
            r.metric,
            r.sensor,
            fmt_g9(r.value),
            fmt_g9(r.half_width),
            r.runs,
            r.seed
        )
        .expect("writing to a String");
    }
    out
}

/// Writes the CSV to `path`, or to stdout when `path` is `None`.
pub fn write_csv(rows: &[Row], path: Option<&Path>) -> Result<()> {
    let text = render_csv(rows);
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Sample-path dump for the CuSum / DE-CuSum figure.
pub fn render_trace(points: &[PathPoint]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.slot,
            u8::from(p.sampled),
            fmt_g9(p.observation),
            fmt_g9(p.cusum),
            fmt_g9(p.decusum)
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (55.2620422, "55.2620422"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567891.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (999999999.5, "1e+09"),
            (f64::INFINITY, "inf"),
        ];
        for (v, s) in cases {
            assert_eq!(fmt_g9(v), s, "{v}");
        }
    }

    #[test]
    fn rows_sorted_by_key() {
        let ctx = RowContext {
            experiment: "e".into(),
            policy: "dcs".into(),
            l: 2,
            m: 1,
            alpha: None,
            a: 1.0,
            runs: 10,
            seed: 0,
        };
        let mut rows = vec![
            ctx.row("pdc", SensorKey::Sensor(1), Estimate::exact(0.5)),
            ctx.row("pdc", SensorKey::Sensor(0), Estimate::exact(0.5)),
            ctx.row("far", SensorKey::All, Estimate::exact(0.5)),
        ];
        rows[0].m = 0;
        let text = render_csv(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].contains(",pdc,2,"));
        assert!(lines[2].contains(",far,all,"));
        assert!(lines[3].contains(",pdc,1,"));
        assert!(lines[3].starts_with("e,dcs,2,1,nan,1,"));
    }
}
