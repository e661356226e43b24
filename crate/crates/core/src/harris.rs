//! Harris graphical representation on the slab `box x [0, horizon]`.
//!
//! Recovery marks are rate-1 Poisson streams per vertex; infection arrows on
//! each oriented edge `x -> y` are Poisson streams of rate
//! `lambda * rho(x) * rho(y)`. Forward, reversed and removal processes are
//! all read off the same realization.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_field, WeightDistribution, WeightSource};
use crate::error::{invalid, Result};
use crate::kinetics::GraphEvent;
use crate::lattice::{BoxSpec, Vertex};
use crate::rng::{derive_seed, exp_rate, stream, Stream};
use crate::stats::{proportion, Estimate};

/// Arrival times on one oriented edge with positive rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrowStream {
    pub from: Vertex,
    pub to: Vertex,
    pub axis: usize,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphicalRep {
    box_spec: BoxSpec,
    lambda: f64,
    horizon: f64,
    seed: u64,
    marks: Vec<Vec<f64>>,
    /// Edges of rate zero have no stream at all.
    arrows: Vec<ArrowStream>,
    events: Vec<(f64, GraphEvent)>,
}

impl GraphicalRep {
    /// Samples all streams; deterministic given `seed`.
    pub fn build<W: WeightSource>(field: &W, lambda: f64, horizon: f64, seed: u64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("infection rate {lambda} must be finite and non-negative"));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon {horizon} must be finite and non-negative"));
        }
        let bx = field.box_spec().clone();
        bx.ensure_dense()?;
        let mut rng = stream(seed, Stream::Graphical, 0);
        let mut marks = Vec::with_capacity(bx.n_vertices());
        let mut arrows = Vec::new();
        for v in 0..bx.n_vertices() {
            marks.push(poisson_times(&mut rng, 1.0, horizon));
            for axis in 0..bx.d() {
                let Some(w) = bx.out_neighbor(v, axis) else { continue };
                let rate = lambda * (field.weight(v) * field.weight(w));
                if rate > 0.0 {
                    let times = poisson_times(&mut rng, rate, horizon);
                    arrows.push(ArrowStream { from: v, to: w, axis, times });
                }
            }
        }
        Ok(Self::assemble(bx, lambda, horizon, seed, marks, arrows))
    }

    /// Builds a rep from explicit streams, e.g. hand-made fixtures.
    pub fn from_streams(
        box_spec: BoxSpec,
        lambda: f64,
        horizon: f64,
        marks: Vec<Vec<f64>>,
        arrows: Vec<ArrowStream>,
    ) -> Result<Self> {
        box_spec.ensure_dense()?;
        if marks.len() != box_spec.n_vertices() {
            return invalid("need one mark stream per vertex");
        }
        let in_range = |ts: &[f64]| {
            ts.iter().all(|&t| (0.0..=horizon).contains(&t)) && ts.windows(2).all(|w| w[0] < w[1])
        };
        if !marks.iter().all(|m| in_range(m)) {
            return invalid("mark times must be strictly increasing within [0, horizon]");
        }
        for a in &arrows {
            if box_spec.out_neighbor(a.from, a.axis) != Some(a.to) {
                return invalid(format!("{} -> {} is not an oriented edge of the box", a.from, a.to));
            }
            if !in_range(&a.times) {
                return invalid("arrow times must be strictly increasing within [0, horizon]");
            }
        }
        let mut arrows = arrows;
        arrows.sort_by_key(|a| (a.from, a.axis));
        Ok(Self::assemble(box_spec, lambda, horizon, 0, marks, arrows))
    }

    fn assemble(
        box_spec: BoxSpec,
        lambda: f64,
        horizon: f64,
        seed: u64,
        marks: Vec<Vec<f64>>,
        arrows: Vec<ArrowStream>,
    ) -> Self {
        let mut events: Vec<(f64, GraphEvent)> = Vec::new();
        for (v, ts) in marks.iter().enumerate() {
            events.extend(ts.iter().map(|&t| (t, GraphEvent::Mark(v))));
        }
        for a in &arrows {
            events.extend(a.times.iter().map(|&t| (t, GraphEvent::Arrow { from: a.from, to: a.to })));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| event_key(&a.1).cmp(&event_key(&b.1))));
        GraphicalRep { box_spec, lambda, horizon, seed, marks, arrows, events }
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.box_spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn marks(&self, v: Vertex) -> &[f64] {
        &self.marks[v]
    }

    pub fn arrows(&self) -> &[ArrowStream] {
        &self.arrows
    }

    /// Times on `from -> from + e_axis`; empty when the edge has rate zero.
    pub fn arrow_times(&self, from: Vertex, axis: usize) -> &[f64] {
        self.arrows
            .binary_search_by_key(&(from, axis), |a| (a.from, a.axis))
            .map(|i| self.arrows[i].times.as_slice())
            .unwrap_or(&[])
    }

    /// All events in time order.
    pub fn events(&self) -> &[(f64, GraphEvent)] {
        &self.events
    }

    /// The same realization read backwards: time `s` becomes `horizon - s`.
    pub fn reversed(&self) -> GraphicalRep {
        let h = self.horizon;
        let flip = |ts: &[f64]| ts.iter().rev().map(|&t| h - t).collect::<Vec<_>>();
        let marks = self.marks.iter().map(|m| flip(m)).collect();
        let arrows = self
            .arrows
            .iter()
            .map(|a| ArrowStream { from: a.from, to: a.to, axis: a.axis, times: flip(&a.times) })
            .collect();
        Self::assemble(self.box_spec.clone(), self.lambda, h, self.seed, marks, arrows)
    }

    fn sweep(&self, start: &[Vertex], t: f64, reverse_arrows: bool) -> Result<Vec<Vertex>> {
        if t > self.horizon {
            return invalid(format!("time {t} beyond the horizon {}", self.horizon));
        }
        let mut inf = vec![false; self.box_spec.n_vertices()];
        for &v in start {
            if !self.box_spec.contains(v) {
                return invalid(format!("vertex {v} outside the box"));
            }
            inf[v] = true;
        }
        for &(s, e) in &self.events {
            if s > t {
                break;
            }
            match e {
                GraphEvent::Mark(v) => inf[v] = false,
                GraphEvent::Arrow { from, to } => {
                    let (src, dst) = if reverse_arrows { (to, from) } else { (from, to) };
                    if inf[src] {
                        inf[dst] = true;
                    }
                }
            }
        }
        Ok((0..inf.len()).filter(|&v| inf[v]).collect())
    }

    /// `eta_t^A`: infection follows arrows `x -> y`, blocked by marks.
    pub fn percolate_forward(&self, start: &[Vertex], t: f64) -> Result<Vec<Vertex>> {
        self.sweep(start, t, false)
    }

    /// `eta-hat_t^A` on this slab's own time axis: an arrow `x -> y` lets `y`
    /// infect `x`.
    pub fn percolate_dual(&self, start: &[Vertex], t: f64) -> Result<Vec<Vertex>> {
        self.sweep(start, t, true)
    }

    /// JSON-lines dump: a meta line, one line per vertex mark stream, one
    /// line per positive-rate arrow stream.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = DumpLine::Meta {
            d: self.box_spec.d(),
            side: self.box_spec.side(),
            lambda: self.lambda,
            horizon: self.horizon,
            seed: self.seed,
        };
        writeln!(w, "{}", serde_json::to_string(&meta)?)?;
        for (v, ts) in self.marks.iter().enumerate() {
            let line = DumpLine::Mark { site: self.box_spec.coords(v), times: ts.clone() };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        for a in &self.arrows {
            let line = DumpLine::Arrow {
                edge: [self.box_spec.coords(a.from), self.box_spec.coords(a.to)],
                times: a.times.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| crate::Error::Invalid("empty dump".into()))??;
        let DumpLine::Meta { d, side, lambda, horizon, seed } = serde_json::from_str(&first)? else {
            return invalid("dump must start with a meta line");
        };
        let bx = BoxSpec::new(d, side)?;
        bx.ensure_dense()?;
        let mut marks = vec![Vec::new(); bx.n_vertices()];
        let mut arrows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                DumpLine::Meta { .. } => return invalid("duplicate meta line"),
                DumpLine::Mark { site, times } => marks[bx.index(&site)?] = times,
                DumpLine::Arrow { edge, times } => {
                    let from = bx.index(&edge[0])?;
                    let to = bx.index(&edge[1])?;
                    let axis = (0..d)
                        .find(|&i| bx.out_neighbor(from, i) == Some(to))
                        .ok_or_else(|| crate::Error::Invalid("arrow is not an oriented edge".into()))?;
                    arrows.push(ArrowStream { from, to, axis, times });
                }
            }
        }
        let mut rep = Self::from_streams(bx, lambda, horizon, marks, arrows)?;
        rep.seed = seed;
        Ok(rep)
    }
}

fn event_key(e: &GraphEvent) -> (u8, Vertex, Vertex) {
    match *e {
        GraphEvent::Mark(v) => (0, v, v),
        GraphEvent::Arrow { from, to } => (1, from, to),
    }
}

fn poisson_times<R: rand::Rng>(rng: &mut R, rate: f64, horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = exp_rate(rng, rate);
    while t <= horizon {
        out.push(t);
        t += exp_rate(rng, rate);
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DumpLine {
    Meta {
        d: usize,
        #[serde(rename = "L")]
        side: usize,
        lambda: f64,
        horizon: f64,
        seed: u64,
    },
    Mark {
        site: Vec<usize>,
        times: Vec<f64>,
    },
    Arrow {
        edge: [Vec<usize>; 2],
        times: Vec<f64>,
    },
}

/// Per-realization duality: `(eta_H(apex) = 1` from the all-infected start,
/// `eta-hat_H^{apex}` nonempty on the time-reversed slab`)`. The apex is the
/// far corner, whose backward cone is the whole box.
pub fn duality_check(rep: &GraphicalRep) -> (bool, bool) {
    let bx = &rep.box_spec;
    let h = rep.horizon;
    let all: Vec<Vertex> = (0..bx.n_vertices()).collect();
    let forward = rep.percolate_forward(&all, h).expect("horizon in range");
    let dual = rep.reversed().percolate_dual(&[bx.apex()], h).expect("horizon in range");
    (forward.binary_search(&bx.apex()).is_ok(), !dual.is_empty())
}

/// Runs `eta^O` and `zeta^O` on the same slab and reports whether the
/// infected set of `zeta` stayed inside that of `eta` after every event.
pub fn zeta_coupling_check(rep: &GraphicalRep) -> bool {
    const H: i8 = 0;
    const I: i8 = 1;
    const R: i8 = -1;
    let n = rep.box_spec.n_vertices();
    let mut eta = vec![H; n];
    let mut zeta = vec![H; n];
    let o = rep.box_spec.origin();
    eta[o] = I;
    zeta[o] = I;
    for &(_, e) in &rep.events {
        let touched = match e {
            GraphEvent::Mark(v) => {
                if eta[v] == I {
                    eta[v] = H;
                }
                if zeta[v] == I {
                    zeta[v] = R;
                }
                v
            }
            GraphEvent::Arrow { from, to } => {
                if eta[from] == I {
                    eta[to] = I;
                }
                if zeta[from] == I && zeta[to] == H {
                    zeta[to] = I;
                }
                to
            }
        };
        // only `touched` changed, so checking it keeps the inclusion invariant
        if zeta[touched] == I && eta[touched] != I {
            return false;
        }
    }
    true
}

/// The annealed realization with index `index` under master seed `seed`:
/// a fresh field and graphical representation from derived streams.
pub fn rep_for(
    dist: &WeightDistribution,
    bx: &BoxSpec,
    lambda: f64,
    horizon: f64,
    seed: u64,
    index: u64,
) -> Result<GraphicalRep> {
    let field = sample_field(dist, bx, derive_seed(seed, Stream::Field, index))?;
    GraphicalRep::build(&field, lambda, horizon, derive_seed(seed, Stream::Graphical, index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub reps: usize,
    pub agree: usize,
    pub forward_rate: f64,
    pub dual_rate: f64,
}

impl DualityReport {
    pub fn agreement_rate(&self) -> f64 {
        self.agree as f64 / self.reps as f64
    }
}

/// [`duality_check`] over `reps` annealed realizations.
pub fn duality_agreement(
    dist: &WeightDistribution,
    bx: &BoxSpec,
    lambda: f64,
    horizon: f64,
    reps: usize,
    seed: u64,
) -> Result<DualityReport> {
    let checks: Vec<(bool, bool)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| Ok(duality_check(&rep_for(dist, bx, lambda, horizon, seed, r)?)))
        .collect::<Result<_>>()?;
    let agree = checks.iter().filter(|(a, b)| a == b).count();
    let fwd = checks.iter().filter(|c| c.0).count();
    let dual = checks.iter().filter(|c| c.1).count();
    Ok(DualityReport {
        reps,
        agree,
        forward_rate: fwd as f64 / reps as f64,
        dual_rate: dual as f64 / reps as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedDuality {
    /// `P(eta_t(apex) = 1)` from the all-infected start.
    pub from_all: Estimate,
    /// `P(eta_t^O != empty)` on independent realizations.
    pub from_origin: Estimate,
    pub joint_se: f64,
}

impl AnnealedDuality {
    pub fn z_score(&self) -> f64 {
        if self.joint_se == 0.0 {
            if self.from_all.value == self.from_origin.value { 0.0 } else { f64::INFINITY }
        } else {
            (self.from_all.value - self.from_origin.value).abs() / self.joint_se
        }
    }
}

/// Compares both sides of the annealed duality identity on independent
/// randomness (the second half uses a derived master seed).
pub fn annealed_duality(
    dist: &WeightDistribution,
    bx: &BoxSpec,
    lambda: f64,
    horizon: f64,
    reps: usize,
    seed: u64,
) -> Result<AnnealedDuality> {
    let other = derive_seed(seed, Stream::Graphical, u64::MAX);
    let all: Vec<Vertex> = (0..bx.n_vertices()).collect();
    let fwd: Vec<bool> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rep = rep_for(dist, bx, lambda, horizon, seed, r)?;
            Ok(rep.percolate_forward(&all, horizon)?.binary_search(&bx.apex()).is_ok())
        })
        .collect::<Result<_>>()?;
    let org: Vec<bool> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rep = rep_for(dist, bx, lambda, horizon, other, r)?;
            Ok(!rep.percolate_forward(&[bx.origin()], horizon)?.is_empty())
        })
        .collect::<Result<_>>()?;
    let from_all = proportion(fwd.iter().filter(|&&b| b).count() as u64, reps as u64);
    let from_origin = proportion(org.iter().filter(|&&b| b).count() as u64, reps as u64);
    let joint_se = (from_all.se.powi(2) + from_origin.se.powi(2)).sqrt();
    Ok(AnnealedDuality { from_all, from_origin, joint_se })
}

/// Number of realizations on which [`zeta_coupling_check`] failed.
pub fn zeta_violations(
    dist: &WeightDistribution,
    bx: &BoxSpec,
    lambda: f64,
    horizon: f64,
    reps: usize,
    seed: u64,
) -> Result<usize> {
    let bad: Vec<bool> = (0..reps as u64)
        .into_par_iter()
        .map(|r| Ok(!zeta_coupling_check(&rep_for(dist, bx, lambda, horizon, seed, r)?)))
        .collect::<Result<_>>()?;
    Ok(bad.iter().filter(|&&b| b).count())
}

#[cfg(test)]
mod tests;
