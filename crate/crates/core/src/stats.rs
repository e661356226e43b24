//! Small running-moment accumulators for Monte Carlo estimates.

use serde::{Deserialize, Serialize};

/// Sum and sum of squares of i.i.d. samples. Merging is exact addition, so
/// aggregating per-replicate values in index order is deterministic.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanAcc {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Sample variance with the `n - 1` denominator.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.sum / n;
        ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn std_err(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean(), se: self.std_err() }
    }
}

impl FromIterator<f64> for MeanAcc {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAcc::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// A point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Binomial proportion with the plug-in standard error `sqrt(p(1-p)/n)`.
pub fn proportion(successes: u64, n: u64) -> Estimate {
    if n == 0 {
        return Estimate { value: 0.0, se: 0.0 };
    }
    let p = successes as f64 / n as f64;
    Estimate { value: p, se: (p * (1.0 - p) / n as f64).sqrt() }
}

/// `P(Bin(n, p) >= k)`, summed in log space.
pub fn binomial_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_c = ln_choose(n, k);
    let mut total = 0.0;
    for j in k..=n {
        let term = (log_c + j as f64 * lp + (n - j) as f64 * lq).exp();
        total += term;
        if term < total * 1e-17 && j > k + 10 {
            break;
        }
        log_c += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
    }
    total.min(1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}
