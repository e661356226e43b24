//! Survival from a single infected origin and the search for the rate at
//! which it crosses a threshold.
//!
//! "Survival" is a finite proxy: the infected set is nonempty at the horizon,
//! or it reached `infected_cap` vertices first. Fields are evaluated lazily,
//! so the box can be far larger than anything the process reaches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{moments, LazyField, WeightDistribution};
use crate::error::{invalid, Error, Result};
use crate::kinetics::{default_side_for, f_t_estimate, run_from, Mode, RunOptions, StoreKind};
use crate::lattice::BoxSpec;
use crate::rng::{derive_seed, Stream};
use crate::stats::{binomial_upper_tail, proportion, Estimate};

/// Proxy settings shared by every probe of a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalProxy {
    pub side: usize,
    pub horizon: f64,
    pub infected_cap: Option<usize>,
}

impl SurvivalProxy {
    /// Defaults used by scans: the largest lazy box that indexes safely,
    /// horizon 200 and a cap of 1000 infected vertices.
    pub fn for_dim(d: usize) -> Self {
        SurvivalProxy { side: default_scan_side(d), horizon: 200.0, infected_cap: Some(1000) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid(format!("horizon {} must be positive", self.horizon));
        }
        if self.infected_cap == Some(0) {
            return invalid("infected cap must be positive");
        }
        Ok(())
    }

    fn doubled(&self) -> SurvivalProxy {
        SurvivalProxy {
            side: self.side.saturating_mul(2),
            horizon: 2.0 * self.horizon,
            infected_cap: self.infected_cap.map(|c| c.saturating_mul(2)),
        }
    }
}

/// Largest side `L <= 2^20` whose doubled box `(2L+1)^d` still fits in
/// 63 bits, so the convergence check can index it.
pub fn default_scan_side(d: usize) -> usize {
    let fits = |side: usize| ((2 * side + 1) as f64).powi(d as i32) <= 2f64.powi(63);
    let mut side = ((2f64.powf(63.0 / d as f64) - 1.0) / 2.0).min((1u64 << 20) as f64) as usize;
    while side > 1 && !fits(side) {
        side -= 1;
    }
    side.max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub lambda: f64,
    pub d: usize,
    pub side: usize,
    pub horizon: f64,
    pub reps: usize,
    pub p_hat: f64,
    pub se: f64,
    /// Runs that stopped at the infected cap.
    pub capped: usize,
    /// Set once the doubling check has run.
    pub box_converged: Option<bool>,
}

/// Per-replicate `(survived, capped)` from `{O}`. Replicate `r` uses the same
/// field and process seeds at every `lambda`, so probes share random numbers.
pub fn survival_runs(
    dist: &WeightDistribution,
    d: usize,
    lambda: f64,
    proxy: &SurvivalProxy,
    reps: usize,
    seed: u64,
) -> Result<Vec<(bool, bool)>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("infection rate {lambda} must be positive"));
    }
    if reps == 0 {
        return invalid("need at least one replicate");
    }
    proxy.validate()?;
    let bx = BoxSpec::new(d, proxy.side)?;
    let opts = RunOptions {
        infected_cap: proxy.infected_cap,
        store: StoreKind::Sparse,
        ..RunOptions::horizon(proxy.horizon)
    };
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let field = LazyField::new(dist, bx.clone(), derive_seed(seed, Stream::Field, r));
            let res = run_from(&field, Mode::Eta, &[bx.origin()], &[], lambda, &opts, derive_seed(seed, Stream::Process, r))?;
            Ok((res.survived, res.capped))
        })
        .collect()
}

/// Annealed survival from `{O}`; see [`survival_runs`].
pub fn survival_probability(
    dist: &WeightDistribution,
    d: usize,
    lambda: f64,
    proxy: &SurvivalProxy,
    reps: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    let runs = survival_runs(dist, d, lambda, proxy, reps, seed)?;
    let alive = runs.iter().filter(|r| r.0).count() as u64;
    let est = proportion(alive, reps as u64);
    Ok(SurvivalEstimate {
        lambda,
        d,
        side: proxy.side,
        horizon: proxy.horizon,
        reps,
        p_hat: est.value,
        se: est.se,
        capped: runs.iter().filter(|r| r.1).count(),
        box_converged: None,
    })
}

/// Re-estimates with side, horizon and cap doubled (same seeds) and sets
/// `box_converged` when the two agree within 3 joint standard errors.
pub fn check_box_convergence(
    dist: &WeightDistribution,
    est: &mut SurvivalEstimate,
    proxy: &SurvivalProxy,
    seed: u64,
) -> Result<SurvivalEstimate> {
    let big = survival_probability(dist, est.d, est.lambda, &proxy.doubled(), est.reps, seed)?;
    let joint = (est.se.powi(2) + big.se.powi(2)).sqrt();
    let diff = (est.p_hat - big.p_hat).abs();
    est.box_converged = Some(diff <= 3.0 * joint || diff == 0.0);
    Ok(big)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub t: f64,
    pub f_t: Estimate,
    /// `f_0 * exp((d lambda E rho^2 - 1) t)`
    pub envelope: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub lambda: f64,
    pub exponent: f64,
    pub f_0: Estimate,
    pub checks: Vec<EnvelopeCheck>,
    pub survival: SurvivalEstimate,
    /// Upper bound on survival to the horizon implied by the envelope.
    pub floor: f64,
    /// `P(Bin(reps, floor) >= survivors)`.
    pub floor_p_value: f64,
    pub floor_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub d: usize,
    pub rows: Vec<LowerBoundRow>,
}

impl LowerBoundReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.floor_ok && r.checks.iter().all(|c| c.ok))
    }
}

/// Checks the subcritical envelope at each `lambda` below `1/(d E rho^2)`
/// and compares survival at the horizon with the floor it implies:
/// `P(eta_h(O)=1) <= P(rho=0) e^{-h} + E rho e^{(d lambda E rho^2 - 1) h} / a_min`,
/// `a_min` being the smallest positive weight.
pub fn verify_lower_bound(
    dist: &WeightDistribution,
    d: usize,
    lambdas: &[f64],
    times: &[f64],
    proxy: &SurvivalProxy,
    reps: usize,
    seed: u64,
) -> Result<LowerBoundReport> {
    let mo = moments(dist);
    let threshold = 1.0 / (d as f64 * mo.second);
    if let Some(&bad) = lambdas.iter().find(|&&l| !(l > 0.0 && l < threshold)) {
        return invalid(format!("rate {bad} is not in (0, 1/(d E rho^2)) = (0, {threshold})"));
    }
    let a_min = dist
        .values()
        .iter()
        .zip(dist.probs())
        .filter(|(&a, &p)| a > 0.0 && p > 0.0)
        .map(|(&a, _)| a)
        .fold(f64::INFINITY, f64::min);
    let p_zero: f64 = dist.values().iter().zip(dist.probs()).filter(|(&a, _)| a == 0.0).map(|(_, &p)| p).sum();
    let mut rows = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let exponent = d as f64 * lambda * mo.second - 1.0;
        let row_seed = derive_seed(seed, Stream::Process, i as u64);
        let f_0 = f_t_estimate(dist, &BoxSpec::new(d, 1)?, lambda, 0.0, 2, row_seed)?;
        let mut checks = Vec::new();
        for &t in times {
            let bx = BoxSpec::new(d, default_side_for(t))?;
            let f_t = f_t_estimate(dist, &bx, lambda, t, reps, row_seed)?;
            let envelope = f_0.value * (exponent * t).exp();
            checks.push(EnvelopeCheck { t, ok: f_t.value <= envelope + 3.0 * f_t.se, f_t, envelope });
        }
        let survival = survival_probability(dist, d, lambda, proxy, reps, row_seed)?;
        let h = proxy.horizon;
        let floor = (p_zero * (-h).exp() + mo.mean * (exponent * h).exp() / a_min).min(1.0);
        let survivors = (survival.p_hat * reps as f64).round() as u64;
        let floor_p_value = binomial_upper_tail(reps as u64, floor, survivors);
        rows.push(LowerBoundRow {
            lambda,
            exponent,
            f_0,
            checks,
            survival,
            floor,
            floor_p_value,
            floor_ok: floor_p_value > 0.01,
        });
    }
    Ok(LowerBoundReport { d, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStatus {
    /// The bracket narrowed below the tolerance.
    Converged,
    /// A probe stayed within 2 s.e. of the threshold after widening.
    StatisticallyLimited,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    pub p_hat: f64,
    pub se: f64,
    pub reps: usize,
    pub capped: usize,
}

impl From<&SurvivalEstimate> for Probe {
    fn from(s: &SurvivalEstimate) -> Self {
        Probe { lambda: s.lambda, p_hat: s.p_hat, se: s.se, reps: s.reps, capped: s.capped }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CritScanResult {
    pub d: usize,
    pub dist_id: String,
    pub theta: f64,
    pub tol: f64,
    pub proxy: SurvivalProxy,
    pub bracket: (f64, f64),
    pub trace: Vec<Probe>,
    pub lambda_c: f64,
    pub status: ScanStatus,
    pub mean_field: f64,
    /// `1/(d E rho^2)`; numerically the mean-field value as well.
    pub lower_bound: f64,
    pub box_converged: Option<bool>,
}

impl CritScanResult {
    pub fn d_lambda_c(&self) -> f64 {
        self.d as f64 * self.lambda_c
    }

    /// `d` times the final bracket.
    pub fn d_bracket(&self) -> (f64, f64) {
        (self.d as f64 * self.bracket.0, self.d as f64 * self.bracket.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub theta: f64,
    pub tol: f64,
    pub reps_per_probe: usize,
    /// Probes allowed while bracketing.
    pub bracket_budget: usize,
    pub growth: f64,
    pub check_box: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { theta: 0.05, tol: 0.01, reps_per_probe: 2000, bracket_budget: 12, growth: 1.5, check_box: true }
    }
}

/// Brackets from `1/(d E rho^2)` upwards by `growth`, then bisects on
/// `p_hat(lambda) >= theta`.
pub fn estimate_lambda_c(
    dist: &WeightDistribution,
    d: usize,
    proxy: &SurvivalProxy,
    opts: &ScanOptions,
    seed: u64,
) -> Result<CritScanResult> {
    if !(opts.theta > 0.0 && opts.theta < 1.0) {
        return invalid(format!("threshold {} must lie in (0, 1)", opts.theta));
    }
    if !(opts.tol > 0.0) || !(opts.growth > 1.0) || opts.reps_per_probe == 0 {
        return invalid("need tol > 0, growth > 1 and reps_per_probe > 0");
    }
    let mo = moments(dist);
    let reference = 1.0 / (d as f64 * mo.second);
    let reps = opts.reps_per_probe;
    let mut trace: Vec<Probe> = Vec::new();
    let probe = |lambda: f64, reps: usize, trace: &mut Vec<Probe>| -> Result<SurvivalEstimate> {
        let s = survival_probability(dist, d, lambda, proxy, reps, seed)?;
        trace.push(Probe::from(&s));
        Ok(s)
    };

    let mut lo = reference;
    let mut used = 0;
    let mut first = probe(lo, reps, &mut trace)?;
    used += 1;
    // the proxy can overshoot at the reference rate; walk down if it does
    while first.p_hat >= opts.theta {
        if used >= opts.bracket_budget {
            return Err(Error::Bracket { grid: trace.iter().map(|p| (p.lambda, p.p_hat)).collect() });
        }
        lo /= opts.growth;
        first = probe(lo, reps, &mut trace)?;
        used += 1;
    }
    let mut hi = lo * opts.growth;
    loop {
        if used >= opts.bracket_budget {
            return Err(Error::Bracket { grid: trace.iter().map(|p| (p.lambda, p.p_hat)).collect() });
        }
        let s = probe(hi, reps, &mut trace)?;
        used += 1;
        if s.p_hat >= opts.theta {
            break;
        }
        lo = hi;
        hi *= opts.growth;
    }

    let mut status = ScanStatus::Converged;
    while hi - lo >= opts.tol {
        let mid = 0.5 * (lo + hi);
        let mut s = probe(mid, reps, &mut trace)?;
        if (s.p_hat - opts.theta).abs() < 2.0 * s.se {
            s = probe(mid, 4 * reps, &mut trace)?;
            if (s.p_hat - opts.theta).abs() < 2.0 * s.se {
                status = ScanStatus::StatisticallyLimited;
                break;
            }
        }
        if s.p_hat >= opts.theta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda_c = 0.5 * (lo + hi);
    let box_converged = if opts.check_box {
        let mut at = survival_probability(dist, d, lambda_c, proxy, reps, seed)?;
        check_box_convergence(dist, &mut at, proxy, seed)?;
        at.box_converged
    } else {
        None
    };
    Ok(CritScanResult {
        d,
        dist_id: dist.id(),
        theta: opts.theta,
        tol: opts.tol,
        proxy: proxy.clone(),
        bracket: (lo, hi),
        trace,
        lambda_c,
        status,
        mean_field: reference,
        lower_bound: reference,
        box_converged,
    })
}

#[cfg(test)]
mod tests;
