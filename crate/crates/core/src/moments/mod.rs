//! First and second moments of the infected-path count `|L_n|`.
//!
//! A path `O = x_0 -> ... -> x_n` is infected when every edge clock beats
//! the recovery clock of its source, `U_{x_j x_{j+1}} <= T_{x_j}`. Given the
//! weights each edge passes with probability `g(a, b) = lambda ab / (1 + lambda ab)`,
//! and since the `j`-th vertex of every path sits on level `j`, the annealed
//! expectations factor level by level into transfer-matrix products.

mod paths;

pub use paths::{count_paths, mean_path_count, PathPercolation, PATH_BUDGET};

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::env::WeightDistribution;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Stream};
use crate::stats::MeanAcc;
use crate::walks::coincidence_pattern;

#[inline]
pub fn g(lambda: f64, a: f64, b: f64) -> f64 {
    let r = lambda * a * b;
    r / (1.0 + r)
}

/// `P(U_1 <= T, U_2 <= T)` for `T ~ Exp(1)` and independent
/// `U_i ~ Exp(r_i)`.
#[inline]
pub fn shared_source_exact(r1: f64, r2: f64) -> f64 {
    1.0 - 1.0 / (1.0 + r1) - 1.0 / (1.0 + r2) + 1.0 / (1.0 + r1 + r2)
}

/// The cruder shared-source estimate `2 r1 r2 / ((1 + r1)(1 + r2))`.
#[inline]
pub fn shared_source_bound(r1: f64, r2: f64) -> f64 {
    2.0 * r1 * r2 / ((1.0 + r1) * (1.0 + r2))
}

/// How the shared-source factor is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorMode {
    #[default]
    Exact,
    PaperBound,
}

impl std::str::FromStr for FactorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(FactorMode::Exact),
            "paper-bound" => Ok(FactorMode::PaperBound),
            _ => invalid(format!("unknown factor mode {s:?} (exact, paper-bound)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairFactor {
    /// What the second-moment computation uses.
    pub value: f64,
    /// Set for the shared-source case, where `value` is the upper bound.
    pub bound: bool,
    pub exact: f64,
}

/// `F(x, y; z1, z2)`: probability that both edges `x -> z1` and `y -> z2`
/// pass. With `same_source`, `rho_y` is ignored; with `same_target`,
/// `rho_z2` is ignored.
pub fn pair_factor(
    rho_x: f64,
    rho_y: f64,
    rho_z1: f64,
    rho_z2: f64,
    same_source: bool,
    same_target: bool,
    lambda: f64,
) -> PairFactor {
    let exact_only = |v: f64| PairFactor { value: v, bound: false, exact: v };
    match (same_source, same_target) {
        (false, false) => exact_only(g(lambda, rho_x, rho_z1) * g(lambda, rho_y, rho_z2)),
        (false, true) => exact_only(g(lambda, rho_x, rho_z1) * g(lambda, rho_y, rho_z1)),
        (true, true) => exact_only(g(lambda, rho_x, rho_z1)),
        (true, false) => {
            let r1 = lambda * rho_x * rho_z1;
            let r2 = lambda * rho_x * rho_z2;
            PairFactor {
                value: shared_source_bound(r1, r2),
                bound: true,
                exact: shared_source_exact(r1, r2),
            }
        }
    }
}

/// `A[i][j] = p_j g(a_i, a_j)` on the support of a discrete weight law.
#[derive(Clone, Debug)]
pub struct TransferOperator {
    values: Vec<f64>,
    probs: Vec<f64>,
    lambda: f64,
    a: Vec<Vec<f64>>,
}

impl TransferOperator {
    pub fn new(dist: &WeightDistribution, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("infection rate {lambda} must be finite and non-negative"));
        }
        let values = dist.values().to_vec();
        let probs = dist.probs().to_vec();
        let a = values
            .iter()
            .map(|&ai| values.iter().zip(&probs).map(|(&aj, &pj)| pj * g(lambda, ai, aj)).collect())
            .collect();
        Ok(TransferOperator { values, probs, lambda, a })
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
    }

    /// `E prod_{j<n} g(rho_j, rho_{j+1})` along a chain of i.i.d. weights,
    /// for every `n` up to `n_max`.
    pub fn chain_expectations(&self, n_max: usize) -> Vec<f64> {
        let mut v = vec![1.0; self.values.len()];
        let mut out = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            if n > 0 {
                v = self.apply(&v);
            }
            out.push(self.probs.iter().zip(&v).map(|(p, x)| p * x).sum());
        }
        out
    }
}

/// `E|L_n| = d^n sum_i p_i (A^n 1)_i`.
pub fn expected_ln_exact(dist: &WeightDistribution, lambda: f64, d: usize, n: usize) -> Result<f64> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let chain = TransferOperator::new(dist, lambda)?.chain_expectations(n)[n];
    Ok((d as f64).powi(n as i32) * chain)
}

/// Forward transfer along the coincidence pattern of two walks.
///
/// `joint[j]` says whether both walks occupy the same vertex at level `j`;
/// `joint[0]` must be true. Returns `E prod F` over the first `n` steps for
/// every `n < joint.len()`.
pub struct PairTransfer {
    values: Vec<f64>,
    probs: Vec<f64>,
    /// `gm[a][b] = g(a_a, a_b)`.
    gm: Vec<Vec<f64>>,
    /// `ss[a][b][c]`: shared-source factor from weight `a` to `(b, c)`.
    ss: Vec<Vec<Vec<f64>>>,
}

impl PairTransfer {
    pub fn new(dist: &WeightDistribution, lambda: f64, mode: FactorMode) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("infection rate {lambda} must be finite and non-negative"));
        }
        let values = dist.values().to_vec();
        let probs = dist.probs().to_vec();
        let gm = values.iter().map(|&a| values.iter().map(|&b| g(lambda, a, b)).collect()).collect();
        let ss = values
            .iter()
            .map(|&a| {
                values
                    .iter()
                    .map(|&b| {
                        values
                            .iter()
                            .map(|&c| {
                                let (r1, r2) = (lambda * a * b, lambda * a * c);
                                match mode {
                                    FactorMode::Exact => shared_source_exact(r1, r2),
                                    FactorMode::PaperBound => shared_source_bound(r1, r2),
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(PairTransfer { values, probs, gm, ss })
    }

    pub fn prefix_values(&self, joint: &[bool]) -> Vec<f64> {
        assert!(joint.first() == Some(&true), "both walks start at the origin");
        let mut v = self.probs.clone();
        let mut out = Vec::with_capacity(joint.len());
        out.push(1.0);
        for w in joint.windows(2) {
            v = self.step_vector(&v, w[0], w[1]);
            out.push(v.iter().sum());
        }
        out
    }

    /// One level of the pair transfer. Joint states are indexed by weight,
    /// split states by `a * k + b`; the new level's weights are averaged in.
    fn step_vector(&self, v: &[f64], from_joint: bool, to_joint: bool) -> Vec<f64> {
        let k = self.values.len();
        let p = &self.probs;
        match (from_joint, to_joint) {
            (true, true) => {
                (0..k).map(|b| p[b] * (0..k).map(|a| v[a] * self.gm[a][b]).sum::<f64>()).collect()
            }
            (true, false) => {
                let mut out = vec![0.0; k * k];
                for b in 0..k {
                    for c in 0..k {
                        out[b * k + c] = p[b] * p[c] * (0..k).map(|a| v[a] * self.ss[a][b][c]).sum::<f64>();
                    }
                }
                out
            }
            (false, true) => (0..k)
                .map(|c| {
                    let mut s = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            s += v[a * k + b] * self.gm[a][c] * self.gm[b][c];
                        }
                    }
                    p[c] * s
                })
                .collect(),
            (false, false) => {
                // separable: first walk's step, then the second's
                let mut half = vec![0.0; k * k];
                for a2 in 0..k {
                    for b in 0..k {
                        half[a2 * k + b] = (0..k).map(|a| v[a * k + b] * self.gm[a][a2]).sum();
                    }
                }
                let mut out = vec![0.0; k * k];
                for a2 in 0..k {
                    for b2 in 0..k {
                        let s: f64 = (0..k).map(|b| half[a2 * k + b] * self.gm[b][b2]).sum();
                        out[a2 * k + b2] = p[a2] * p[b2] * s;
                    }
                }
                out
            }
        }
    }
}

/// Cumulative work guard (state updates times vector length) for
/// [`second_moment_ratio_exact`].
pub const EXACT_RATIO_BUDGET: usize = 50_000_000;

/// Ratio `E|L_n|^2 / (E|L_n|)^2` computed exactly by summing over the
/// difference walk `S - S'` (only whether it sits at 0 matters to the
/// environment factor). Cost grows with the number of reachable
/// differences, so this is meant for small `d` and `n`.
pub fn second_moment_ratio_exact(
    dist: &WeightDistribution,
    lambda: f64,
    d: usize,
    n: usize,
    mode: FactorMode,
) -> Result<f64> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let pt = PairTransfer::new(dist, lambda, mode)?;
    let k = pt.values.len();
    let first = TransferOperator::new(dist, lambda)?.chain_expectations(n)[n];
    if first == 0.0 {
        return invalid("first moment vanishes; ratio undefined");
    }
    // state: difference vector -> (single-weight vector, split-weight matrix)
    let mut states: FxHashMap<Vec<i32>, Vec<f64>> = FxHashMap::default();
    states.insert(vec![0; d], pt.probs.clone());
    let step = 1.0 / (d * d) as f64;
    let mut work = 0usize;
    for _ in 0..n {
        work = work.saturating_add(states.len().saturating_mul(d * d).saturating_mul(d + k * k));
        if work > EXACT_RATIO_BUDGET {
            return Err(Error::Resource(format!(
                "exact pair sum at d={d}, n={n} exceeds the work budget; use the Monte Carlo ratio"
            )));
        }
        let mut next: FxHashMap<Vec<i32>, Vec<f64>> = FxHashMap::default();
        for (diff, vec) in &states {
            let was_joint = diff.iter().all(|&x| x == 0);
            for i in 0..d {
                for j in 0..d {
                    let mut nd = diff.clone();
                    nd[i] += 1;
                    nd[j] -= 1;
                    let now_joint = nd.iter().all(|&x| x == 0);
                    let moved = pt.step_vector(vec, was_joint, now_joint);
                    let slot = next
                        .entry(nd)
                        .or_insert_with(|| vec![0.0; if now_joint { k } else { k * k }]);
                    for (s, m) in slot.iter_mut().zip(moved) {
                        *s += step * m;
                    }
                }
            }
        }
        states = next;
    }
    let second: f64 = states.values().flat_map(|v| v.iter()).sum();
    Ok(second / (first * first))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub n: usize,
    pub ratio: f64,
    pub se: f64,
}

/// Monte Carlo ratio for every `n <= n_max`. Replicate `r` draws one walk
/// pair `(S, S')` and also scores `(S, mirror(S'))`, where the mirror maps
/// axis `i` to `d - 1 - i`; the pair average is one observation.
pub fn second_moment_ratio_profile(
    dist: &WeightDistribution,
    lambda: f64,
    d: usize,
    n_max: usize,
    walk_samples: usize,
    seed: u64,
    mode: FactorMode,
) -> Result<Vec<RatioEstimate>> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    if walk_samples == 0 {
        return invalid("need at least one walk sample");
    }
    let pt = PairTransfer::new(dist, lambda, mode)?;
    let first = TransferOperator::new(dist, lambda)?.chain_expectations(n_max);
    if first.iter().any(|&c| c == 0.0) {
        return invalid("first moment vanishes; ratio undefined");
    }
    let rows: Vec<Vec<f64>> = (0..walk_samples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, Stream::Walks, r);
            let s: Vec<usize> = (0..n_max).map(|_| rng.gen_range(0..d)).collect();
            let t: Vec<usize> = (0..n_max).map(|_| rng.gen_range(0..d)).collect();
            let mirror: Vec<usize> = t.iter().map(|&i| d - 1 - i).collect();
            let a = pt.prefix_values(&coincidence_pattern(d, &s, &t));
            let b = pt.prefix_values(&coincidence_pattern(d, &s, &mirror));
            a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
        })
        .collect();
    Ok((0..=n_max)
        .map(|n| {
            let acc: MeanAcc = rows.iter().map(|row| row[n]).collect();
            let c2 = first[n] * first[n];
            RatioEstimate { n, ratio: acc.mean() / c2, se: acc.std_err() / c2 }
        })
        .collect())
}

pub fn second_moment_ratio_mc(
    dist: &WeightDistribution,
    lambda: f64,
    d: usize,
    n: usize,
    walk_samples: usize,
    seed: u64,
) -> Result<RatioEstimate> {
    let mut profile =
        second_moment_ratio_profile(dist, lambda, d, n, walk_samples, seed, FactorMode::Exact)?;
    Ok(profile.pop().expect("profile has n + 1 rows"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub e_ln: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    /// `(E|L_n|)^2 / E|L_n|^2`, a lower bound on `P(|L_n| > 0)`.
    pub lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalBound {
    pub n_max: usize,
    /// Bound at `n_max`; survival forever implies `|L_n| > 0` for every `n`,
    /// so the deepest level is the relevant one.
    pub bound: f64,
    pub bound_se: f64,
    pub profile: Vec<BoundRow>,
}

pub fn survival_lower_bound(
    dist: &WeightDistribution,
    lambda: f64,
    d: usize,
    n_max: usize,
    walk_samples: usize,
    seed: u64,
) -> Result<SurvivalBound> {
    let ratios =
        second_moment_ratio_profile(dist, lambda, d, n_max, walk_samples, seed, FactorMode::Exact)?;
    let chain = TransferOperator::new(dist, lambda)?.chain_expectations(n_max);
    let profile: Vec<BoundRow> = ratios
        .iter()
        .map(|r| BoundRow {
            n: r.n,
            e_ln: (d as f64).powi(r.n as i32) * chain[r.n],
            ratio: r.ratio,
            ratio_se: r.se,
            lower_bound: (1.0 / r.ratio).clamp(0.0, 1.0),
        })
        .collect();
    let last = profile.last().expect("profile has n_max + 1 rows");
    Ok(SurvivalBound {
        n_max,
        bound: last.lower_bound,
        bound_se: last.ratio_se / (last.ratio * last.ratio),
        profile,
    })
}
