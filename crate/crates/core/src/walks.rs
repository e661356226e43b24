//! Coincidence structure of two independent oriented random walks.
//!
//! Both walks start at the origin and step along a uniform axis. A time `n`
//! with `S_n = S'_n` either continues together (`S_{n+1} = S'_{n+1}`) or
//! splits. Maximal runs of together-steps are episodes `[tau_k, sigma_k]`;
//! split coincidences between episodes are counted per gap as `K_j`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{moments, WeightDistribution};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Stream, StreamRng};
use crate::stats::{proportion, Estimate, MeanAcc};

pub const DEFAULT_HORIZON: usize = 10_000;

/// Two walks stored as step axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPair {
    pub d: usize,
    pub seed: u64,
    pub s: Vec<usize>,
    pub t: Vec<usize>,
}

impl WalkPair {
    pub fn from_steps(d: usize, s: Vec<usize>, t: Vec<usize>) -> Result<Self> {
        if d == 0 {
            return invalid("dimension must be positive");
        }
        if s.len() != t.len() || s.iter().chain(&t).any(|&a| a >= d) {
            return invalid("walks need equal length and axes below d");
        }
        Ok(WalkPair { d, seed: 0, s, t })
    }

    pub fn n_steps(&self) -> usize {
        self.s.len()
    }

    /// Vertices visited by the first (`second = false`) or second walk.
    pub fn trajectory(&self, second: bool) -> Vec<Vec<usize>> {
        let steps = if second { &self.t } else { &self.s };
        let mut x = vec![0; self.d];
        let mut out = vec![x.clone()];
        for &a in steps {
            x[a] += 1;
            out.push(x.clone());
        }
        out
    }

    pub fn coincidences(&self) -> Vec<bool> {
        coincidence_pattern(self.d, &self.s, &self.t)
    }
}

fn walk_rng(seed: u64, index: u64) -> StreamRng {
    stream(seed, Stream::Walks, index)
}

pub fn sample_walk_pair(d: usize, n_steps: usize, seed: u64) -> Result<WalkPair> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let mut rng = walk_rng(seed, 0);
    let mut s = Vec::with_capacity(n_steps);
    let mut t = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        s.push(rng.gen_range(0..d));
        t.push(rng.gen_range(0..d));
    }
    Ok(WalkPair { d, seed, s, t })
}

/// Tracks `S_n - S'_n` through its count of nonzero coordinates.
#[derive(Clone, Debug)]
struct Difference {
    diff: Vec<i32>,
    nonzero: usize,
}

impl Difference {
    fn new(d: usize) -> Self {
        Difference { diff: vec![0; d], nonzero: 0 }
    }

    #[inline]
    fn step(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for (axis, delta) in [(a, 1), (b, -1)] {
            let before = self.diff[axis] != 0;
            self.diff[axis] += delta;
            let after = self.diff[axis] != 0;
            self.nonzero = self.nonzero + after as usize - before as usize;
        }
    }

    #[inline]
    fn joint(&self) -> bool {
        self.nonzero == 0
    }
}

/// `out[n]` is true when `S_n = S'_n`, for `n = 0..=len`.
pub fn coincidence_pattern(d: usize, s: &[usize], t: &[usize]) -> Vec<bool> {
    assert_eq!(s.len(), t.len());
    let mut diff = Difference::new(d);
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(true);
    for (&a, &b) in s.iter().zip(t) {
        diff.step(a, b);
        out.push(diff.joint());
    }
    out
}

/// How an episode's length is counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthConvention {
    /// `L = sigma - tau + 1`, the number of shared vertices (at least 2).
    #[default]
    Literal,
    /// `L = sigma - tau`, the number of shared steps (at least 1).
    JointSteps,
}

impl std::str::FromStr for LengthConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LengthConvention::Literal),
            "joint-steps" => Ok(LengthConvention::JointSteps),
            _ => invalid(format!("unknown length convention {s:?} (literal, joint-steps)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub tau: usize,
    /// `None` when the walks were still together at the horizon.
    pub sigma: Option<usize>,
}

impl Episode {
    pub fn length(&self, conv: LengthConvention) -> Option<usize> {
        self.sigma.map(|s| match conv {
            LengthConvention::Literal => s - self.tau + 1,
            LengthConvention::JointSteps => s - self.tau,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub horizon: usize,
    pub episodes: Vec<Episode>,
    /// `k[j] = |A_j|`; one entry per gap before, between and after episodes.
    pub k: Vec<usize>,
    /// The last episode is still open at the horizon.
    pub truncated: bool,
}

impl CollisionStats {
    /// `T`, including a censored final episode.
    pub fn t(&self) -> usize {
        self.episodes.len()
    }

    pub fn sum_k(&self) -> usize {
        self.k.iter().sum()
    }

    /// `sum L_k`, or `None` if an episode is censored.
    pub fn sum_l(&self, conv: LengthConvention) -> Option<usize> {
        self.episodes.iter().map(|e| e.length(conv)).sum()
    }
}

/// Online classification of coincidence times; feed steps `0, 1, ...`.
#[derive(Clone, Debug)]
pub struct CollisionScanner {
    diff: Difference,
    n: usize,
    open: Option<usize>,
    episodes: Vec<Episode>,
    k: Vec<usize>,
}

impl CollisionScanner {
    pub fn new(d: usize) -> Self {
        CollisionScanner { diff: Difference::new(d), n: 0, open: None, episodes: Vec::new(), k: vec![0] }
    }

    #[inline]
    pub fn step(&mut self, a: usize, b: usize) {
        let was = self.diff.joint();
        self.diff.step(a, b);
        if was {
            if self.diff.joint() {
                if self.open.is_none() {
                    self.open = Some(self.n);
                }
            } else if let Some(tau) = self.open.take() {
                self.episodes.push(Episode { tau, sigma: Some(self.n) });
                self.k.push(0);
            } else {
                *self.k.last_mut().expect("k starts with A_0") += 1;
            }
        }
        self.n += 1;
    }

    pub fn finish(mut self) -> CollisionStats {
        let truncated = if let Some(tau) = self.open {
            self.episodes.push(Episode { tau, sigma: None });
            true
        } else {
            false
        };
        CollisionStats { horizon: self.n, episodes: self.episodes, k: self.k, truncated }
    }
}

pub fn collision_stats(wp: &WalkPair) -> CollisionStats {
    let mut sc = CollisionScanner::new(wp.d);
    for (&a, &b) in wp.s.iter().zip(&wp.t) {
        sc.step(a, b);
    }
    sc.finish()
}

/// Samples a pair of `horizon`-step walks and scans it without storing it.
pub fn sample_collision_stats(d: usize, horizon: usize, seed: u64, index: u64) -> CollisionStats {
    let mut rng = walk_rng(seed, index);
    let mut sc = CollisionScanner::new(d);
    for _ in 0..horizon {
        let a = rng.gen_range(0..d);
        let b = rng.gen_range(0..d);
        sc.step(a, b);
    }
    sc.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetEstimate {
    pub d: usize,
    pub horizon: usize,
    pub samples: usize,
    /// `P(2 <= tau <= horizon)` with `tau = inf{n > 0 : S_n = S'_n}`.
    pub tau_ge2: Estimate,
    pub tau_eq1: Estimate,
    pub d2_scaled: f64,
    /// Fraction of pairs that had not met by the horizon.
    pub censored_frac: f64,
}

pub fn meet_probability(d: usize, horizon: usize, samples: usize, seed: u64) -> Result<MeetEstimate> {
    if d < 2 {
        return invalid("first meeting after step 1 needs d >= 2");
    }
    if horizon < 2 || samples == 0 {
        return invalid("need horizon >= 2 and at least one sample");
    }
    let taus: Vec<Option<usize>> = (0..samples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = walk_rng(seed, r);
            let mut diff = Difference::new(d);
            for n in 1..=horizon {
                let a = rng.gen_range(0..d);
                let b = rng.gen_range(0..d);
                diff.step(a, b);
                if diff.joint() {
                    return Some(n);
                }
            }
            None
        })
        .collect();
    let eq1 = taus.iter().filter(|t| **t == Some(1)).count() as u64;
    let ge2 = taus.iter().filter(|t| t.is_some_and(|n| n >= 2)).count() as u64;
    let never = taus.iter().filter(|t| t.is_none()).count();
    let tau_ge2 = proportion(ge2, samples as u64);
    Ok(MeetEstimate {
        d,
        horizon,
        samples,
        d2_scaled: tau_ge2.value * (d * d) as f64,
        tau_ge2,
        tau_eq1: proportion(eq1, samples as u64),
        censored_frac: never as f64 / samples as f64,
    })
}

/// `ln` of the functional's integrand for one uncensored sample.
pub fn lemma41_log_term(
    stats: &CollisionStats,
    lambda: f64,
    m_bound: f64,
    second: f64,
    conv: LengthConvention,
) -> Option<f64> {
    let t = stats.t() as f64;
    let k = stats.sum_k() as f64;
    let l = stats.sum_l(conv)? as f64;
    let mut ln = (t + k) * std::f64::consts::LN_2;
    // written out so zero exponents never meet ln(0)
    if 6.0 * t + 4.0 * k > 0.0 {
        ln += (6.0 * t + 4.0 * k) * m_bound.ln();
    }
    ln += (2.0 * l + 2.0 * k) * (lambda * m_bound * m_bound).ln_1p();
    if l - t != 0.0 {
        ln -= (l - t) * lambda.ln();
    }
    if l + 2.0 * t + 2.0 * k > 0.0 {
        ln -= (l + 2.0 * t + 2.0 * k) * second.ln();
    }
    Some(ln)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSum {
    pub m: usize,
    pub count: usize,
    /// Sum of the integrand over samples with `T = m`, divided by the
    /// number of uncensored samples.
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub d: usize,
    pub lambda: f64,
    pub horizon: usize,
    pub samples: usize,
    pub convention: LengthConvention,
    /// `None` when every sample was censored.
    pub estimate: Option<Estimate>,
    pub censored_frac: f64,
    pub partial_sums: Vec<PartialSum>,
    /// `contribution(m + 1) / contribution(m)` for every `m >= 1` with a
    /// positive contribution.
    pub decay_ratios: Vec<(usize, f64)>,
    /// Every ratio in `decay_ratios` is below [`DECAY_RATIO`].
    pub decaying: bool,
    /// Some ratio reaches 1, or the estimate overflowed.
    pub diverging: bool,
}

/// Geometric decay threshold for consecutive partial sums beyond `m = 1`.
pub const DECAY_RATIO: f64 = 0.5;

pub fn lemma41_functional(
    dist: &WeightDistribution,
    lambda: f64,
    d: usize,
    samples: usize,
    horizon: usize,
    seed: u64,
    conv: LengthConvention,
) -> Result<FunctionalReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("infection rate {lambda} must be positive"));
    }
    if d == 0 || samples == 0 || horizon == 0 {
        return invalid("need d, samples and horizon positive");
    }
    let mo = moments(dist);
    let terms: Vec<(usize, Option<f64>)> = (0..samples as u64)
        .into_par_iter()
        .map(|r| {
            let st = sample_collision_stats(d, horizon, seed, r);
            (st.t(), lemma41_log_term(&st, lambda, mo.bound, mo.second, conv))
        })
        .collect();
    let used: Vec<(usize, f64)> = terms.iter().filter_map(|&(m, ln)| ln.map(|x| (m, x.exp()))).collect();
    let censored_frac = 1.0 - used.len() as f64 / samples as f64;
    let estimate = (!used.is_empty()).then(|| used.iter().map(|&(_, v)| v).collect::<MeanAcc>().estimate());
    let max_m = used.iter().map(|&(m, _)| m).max().unwrap_or(0);
    let mut partial_sums: Vec<PartialSum> =
        (0..=max_m).map(|m| PartialSum { m, count: 0, contribution: 0.0 }).collect();
    if !used.is_empty() {
        for &(m, v) in &used {
            partial_sums[m].count += 1;
            partial_sums[m].contribution += v / used.len() as f64;
        }
    } else {
        partial_sums.clear();
    }
    let decay_ratios: Vec<(usize, f64)> = partial_sums
        .windows(2)
        .filter(|w| w[0].m >= 1 && w[0].contribution > 0.0)
        .map(|w| (w[0].m, w[1].contribution / w[0].contribution))
        .collect();
    let overflow = estimate.as_ref().is_some_and(|e| !e.value.is_finite());
    Ok(FunctionalReport {
        d,
        lambda,
        horizon,
        samples,
        convention: conv,
        decaying: estimate.is_some() && !overflow && decay_ratios.iter().all(|&(_, r)| r < DECAY_RATIO),
        diverging: overflow || decay_ratios.iter().any(|&(_, r)| r >= 1.0),
        decay_ratios,
        estimate,
        censored_frac,
        partial_sums,
    })
}
