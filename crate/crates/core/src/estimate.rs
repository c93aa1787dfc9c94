//! Point estimates with Monte Carlo standard errors.

/// Two-sided 95% normal quantile used for every reported half-width.
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn new(value: f64, std_err: f64) -> Self {
        Estimate { value, std_err }
    }

    /// Exact value with no sampling error.
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_err: 0.0,
        }
    }

    /// Half-width of the 95% normal-approximation interval.
    pub fn half_width(&self) -> f64 {
        Z95 * self.std_err
    }

    /// Sample mean with the standard error of the mean.
    pub fn mean_of(samples: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (n, mean, m2) = welford(samples);
        if n == 0 {
            return None;
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Some(Estimate {
            value: mean,
            std_err: (var / n as f64).sqrt(),
        })
    }

    /// Ratio of sums `sum(num) / sum(den)` with the delta-method standard error
    /// treating each `(num, den)` pair as one i.i.d. unit.
    pub fn ratio_of(pairs: &[(f64, f64)]) -> Option<Self> {
        let n = pairs.len();
        if n == 0 {
            return None;
        }
        let sum_num: f64 = pairs.iter().map(|p| p.0).sum();
        let sum_den: f64 = pairs.iter().map(|p| p.1).sum();
        if sum_den == 0.0 {
            return None;
        }
        let ratio = sum_num / sum_den;
        if n == 1 {
            return Some(Estimate::new(ratio, 0.0));
        }
        let mean_den = sum_den / n as f64;
        let resid_var = pairs
            .iter()
            .map(|(a, b)| (a - ratio * b).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        Some(Estimate::new(
            ratio,
            (resid_var / n as f64).sqrt() / mean_den,
        ))
    }

    /// Standard error of the difference of two independent estimates.
    pub fn pooled_std_err(&self, other: &Estimate) -> f64 {
        self.std_err.hypot(other.std_err)
    }
}

fn welford(samples: impl IntoIterator<Item = f64>) -> (usize, f64, f64) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for x in samples {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    (n, mean, m2)
}
