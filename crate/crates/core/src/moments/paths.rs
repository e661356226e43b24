use rayon::prelude::*;

use crate::env::{sample_field, WeightDistribution, WeightSource};
use crate::error::{invalid, Error, Result};
use crate::lattice::{BoxSpec, Vertex};
use crate::rng::{derive_seed, exp1, exp_rate, stream, Stream};
use crate::stats::{Estimate, MeanAcc};

/// Enumeration guard on visited path prefixes.
pub const PATH_BUDGET: u64 = 100_000_000;

/// Recovery clocks `T_x ~ Exp(1)` per vertex and infection clocks
/// `U_{xy} ~ Exp(lambda rho(x) rho(y))` per oriented edge. An edge of rate
/// zero has `U = +inf`.
#[derive(Clone, Debug)]
pub struct PathPercolation {
    box_spec: BoxSpec,
    lambda: f64,
    seed: u64,
    t: Vec<f64>,
    /// Indexed by `v * d + axis`.
    u: Vec<f64>,
}

impl PathPercolation {
    pub fn sample<W: WeightSource>(field: &W, lambda: f64, seed: u64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("infection rate {lambda} must be finite and non-negative"));
        }
        let bx = field.box_spec().clone();
        bx.ensure_dense()?;
        let d = bx.d();
        let mut rng = stream(seed, Stream::Paths, 0);
        let mut t = Vec::with_capacity(bx.n_vertices());
        let mut u = vec![f64::INFINITY; bx.n_vertices() * d];
        for v in 0..bx.n_vertices() {
            t.push(exp1(&mut rng));
            for axis in 0..d {
                if let Some(w) = bx.out_neighbor(v, axis) {
                    let rate = lambda * field.weight(v) * field.weight(w);
                    if rate > 0.0 {
                        u[v * d + axis] = exp_rate(&mut rng, rate);
                    }
                }
            }
        }
        Ok(PathPercolation { box_spec: bx, lambda, seed, t, u })
    }

    /// Fixture constructor; `u` is indexed by `v * d + axis`.
    pub fn from_values(box_spec: BoxSpec, t: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        box_spec.ensure_dense()?;
        if t.len() != box_spec.n_vertices() || u.len() != box_spec.n_vertices() * box_spec.d() {
            return invalid("clock arrays do not match the box");
        }
        if t.iter().chain(&u).any(|&x| !(x > 0.0)) {
            return invalid("clock values must be positive");
        }
        Ok(PathPercolation { box_spec, lambda: f64::NAN, seed: 0, t, u })
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.box_spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn recovery_clock(&self, v: Vertex) -> f64 {
        self.t[v]
    }

    pub fn infection_clock(&self, v: Vertex, axis: usize) -> f64 {
        self.u[v * self.box_spec.d() + axis]
    }
}

/// Number of oriented paths of length `n` from the origin whose every edge
/// has `U <= T(source)`, by depth-first enumeration.
pub fn count_paths(pp: &PathPercolation, n: usize) -> Result<u64> {
    let bx = &pp.box_spec;
    let d = bx.d();
    if n > bx.side() {
        return invalid(format!("path length {n} exceeds the box side {}", bx.side()));
    }
    let cost: f64 = (0..=n).map(|j| (d as f64).powi(j as i32)).sum();
    if cost > PATH_BUDGET as f64 {
        return Err(Error::Resource(format!(
            "enumerating paths of length {n} at d={d} visits up to {cost:.3e} prefixes (budget {PATH_BUDGET})"
        )));
    }
    let pass: Vec<bool> = (0..bx.n_vertices() * d).map(|e| pp.u[e] <= pp.t[e / d]).collect();
    let mut count = 0u64;
    let mut stack: Vec<(Vertex, usize)> = vec![(bx.origin(), 0)];
    while let Some((v, depth)) = stack.pop() {
        if depth == n {
            count += 1;
            continue;
        }
        for axis in (0..d).rev() {
            if pass[v * d + axis] {
                if let Some(w) = bx.out_neighbor(v, axis) {
                    stack.push((w, depth + 1));
                }
            }
        }
    }
    Ok(count)
}

/// Annealed mean of [`count_paths`] over fresh fields and clocks.
pub fn mean_path_count(
    dist: &WeightDistribution,
    lambda: f64,
    d: usize,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Estimate> {
    let bx = BoxSpec::new(d, n.max(1))?;
    let counts: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let field = sample_field(dist, &bx, derive_seed(seed, Stream::Field, r))?;
            let pp = PathPercolation::sample(&field, lambda, derive_seed(seed, Stream::Paths, r))?;
            Ok(count_paths(&pp, n)? as f64)
        })
        .collect::<Result<_>>()?;
    Ok(counts.into_iter().collect::<MeanAcc>().estimate())
}
