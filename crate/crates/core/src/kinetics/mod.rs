//! Continuous-time contact dynamics under a fixed environment.
//!
//! Three processes share the engine:
//! * `Eta`: healthy `x` is infected at rate `lambda * sum rho(x) rho(y)` over
//!   infected `y` with `y -> x`; infected vertices recover at rate 1.
//! * `EtaHat`: the same with arrows reversed, so `y` infects `x` when `x -> y`.
//! * `Zeta`: like `Eta`, but a recovery moves the vertex to the absorbing
//!   removed state `-1`.

mod engine;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{LazyField, WeightDistribution, WeightSource};
use crate::error::{invalid, Result};
use crate::lattice::{BoxSpec, Vertex};
use crate::rng::{derive_seed, stream, Stream};
use crate::stats::Estimate;

pub const HEALTHY: i8 = 0;
pub const INFECTED: i8 = 1;
pub const REMOVED: i8 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Eta,
    EtaHat,
    Zeta,
}

impl std::str::FromStr for Mode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(Mode::Eta),
            "eta-hat" => Ok(Mode::EtaHat),
            "zeta" => Ok(Mode::Zeta),
            other => invalid(format!("unknown mode '{other}' (eta, eta-hat, zeta)")),
        }
    }
}

/// One timed event of a graphical representation: a recovery mark at a
/// vertex or an infection arrow along the oriented edge `from -> to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphEvent {
    Mark(Vertex),
    Arrow { from: Vertex, to: Vertex },
}

/// Lattice state over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    box_spec: BoxSpec,
    states: Vec<i8>,
    mode: Mode,
    pub clock: f64,
}

impl Configuration {
    /// All vertices healthy.
    pub fn healthy(box_spec: &BoxSpec, mode: Mode) -> Result<Self> {
        box_spec.ensure_dense()?;
        Ok(Configuration {
            box_spec: box_spec.clone(),
            states: vec![HEALTHY; box_spec.n_vertices()],
            mode,
            clock: 0.0,
        })
    }

    /// Every vertex in the box infected.
    pub fn all_infected(box_spec: &BoxSpec, mode: Mode) -> Result<Self> {
        let mut c = Self::healthy(box_spec, mode)?;
        c.states.fill(INFECTED);
        Ok(c)
    }

    pub fn with_infected(box_spec: &BoxSpec, mode: Mode, infected: &[Vertex]) -> Result<Self> {
        let mut c = Self::healthy(box_spec, mode)?;
        for &v in infected {
            c.set(v, INFECTED)?;
        }
        Ok(c)
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.box_spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn states(&self) -> &[i8] {
        &self.states
    }

    pub fn state(&self, v: Vertex) -> i8 {
        self.states[v]
    }

    pub fn set(&mut self, v: Vertex, state: i8) -> Result<()> {
        if !self.box_spec.contains(v) {
            return invalid(format!("vertex {v} outside the box"));
        }
        match state {
            HEALTHY | INFECTED => {}
            REMOVED if self.mode == Mode::Zeta => {}
            _ => return invalid(format!("state {state} not allowed in mode {:?}", self.mode)),
        }
        self.states[v] = state;
        Ok(())
    }

    pub fn infected(&self) -> Vec<Vertex> {
        self.collect(INFECTED)
    }

    pub fn removed(&self) -> Vec<Vertex> {
        self.collect(REMOVED)
    }

    fn collect(&self, state: i8) -> Vec<Vertex> {
        (0..self.states.len()).filter(|&v| self.states[v] == state).collect()
    }

    /// Applies one graphical-representation event with this mode's rules.
    /// A mark recovers (or removes) an infected vertex; an arrow `x -> y`
    /// lets `x` infect a healthy `y` in `Eta`/`Zeta`, and `y` infect `x` in
    /// `EtaHat`.
    pub fn apply(&mut self, event: GraphEvent) {
        match event {
            GraphEvent::Mark(v) => {
                if self.states[v] == INFECTED {
                    self.states[v] = if self.mode == Mode::Zeta { REMOVED } else { HEALTHY };
                }
            }
            GraphEvent::Arrow { from, to } => {
                let (src, dst) = match self.mode {
                    Mode::Eta | Mode::Zeta => (from, to),
                    Mode::EtaHat => (to, from),
                };
                if self.states[src] == INFECTED && self.states[dst] == HEALTHY {
                    self.states[dst] = INFECTED;
                }
            }
        }
    }
}

/// Drives `cfg` through externally supplied timed events, in order, up to
/// time `until`. This is the engine's transition rule without its clocks,
/// used to cross-check the graphical representation.
pub fn replay<I>(cfg: &Configuration, events: I, until: f64) -> Configuration
where
    I: IntoIterator<Item = (f64, GraphEvent)>,
{
    let mut c = cfg.clone();
    for (t, e) in events {
        if t > until {
            break;
        }
        c.apply(e);
        c.clock = t;
    }
    c.clock = until;
    c
}

/// Per-vertex rate of the single transition currently available to each
/// vertex under `cfg`.
pub fn step_rates<W: WeightSource>(cfg: &Configuration, env: &W, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let bx = &cfg.box_spec;
    if env.box_spec() != bx {
        return invalid("field and configuration live on different boxes");
    }
    Ok((0..bx.n_vertices())
        .map(|v| match cfg.states[v] {
            INFECTED => 1.0,
            HEALTHY => {
                let rho_v = env.weight(v);
                let mut sum = 0.0;
                for axis in 0..bx.d() {
                    let y = match cfg.mode {
                        Mode::Eta | Mode::Zeta => bx.in_neighbor(v, axis),
                        Mode::EtaHat => bx.out_neighbor(v, axis),
                    };
                    if let Some(y) = y.filter(|&y| cfg.states[y] == INFECTED) {
                        sum += rho_v * env.weight(y);
                    }
                }
                lambda * sum
            }
            _ => 0.0,
        })
        .collect())
}

/// How the engine stores per-vertex state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StoreKind {
    #[default]
    Auto,
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub horizon: f64,
    /// Times at which `(t, |infected|, sum rho * 1{infected})` is recorded.
    pub sample_times: Vec<f64>,
    /// Stop early, counted as surviving, once this many vertices are infected.
    pub infected_cap: Option<usize>,
    pub store: StoreKind,
}

impl RunOptions {
    pub fn horizon(horizon: f64) -> Self {
        RunOptions { horizon, sample_times: Vec::new(), infected_cap: None, store: StoreKind::Auto }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return invalid(format!("horizon {} must be finite and non-negative", self.horizon));
        }
        if self.sample_times.iter().any(|t| !(*t >= 0.0)) {
            return invalid("sample times must be non-negative");
        }
        if self.sample_times.windows(2).any(|w| w[0] > w[1]) {
            return invalid("sample times must be sorted");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub n_infected: usize,
    /// `sum_x rho(x) 1{x infected}`
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    /// Infected set nonempty at the horizon (or the cap was reached).
    pub survived: bool,
    /// Time the infected set emptied, or the horizon.
    pub extinction_time: f64,
    pub trace: Vec<TracePoint>,
    /// Sorted infected vertices when the run stopped.
    pub final_infected: Vec<Vertex>,
    pub capped: bool,
    pub events: u64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("infection rate {lambda} must be finite and non-negative"));
    }
    Ok(())
}

/// Exact simulation from `cfg0`; deterministic given `seed`.
pub fn run<W: WeightSource>(
    cfg0: &Configuration,
    env: &W,
    lambda: f64,
    opts: &RunOptions,
    seed: u64,
) -> Result<SimResult> {
    if env.box_spec() != &cfg0.box_spec {
        return invalid("field and configuration live on different boxes");
    }
    run_from(env, cfg0.mode, &cfg0.infected(), &cfg0.removed(), lambda, opts, seed)
}

/// Like [`run`] but takes the initial sets directly, so boxes too large for
/// a dense [`Configuration`] can be simulated from a few seeds.
pub fn run_from<W: WeightSource>(
    env: &W,
    mode: Mode,
    infected: &[Vertex],
    removed: &[Vertex],
    lambda: f64,
    opts: &RunOptions,
    seed: u64,
) -> Result<SimResult> {
    check_lambda(lambda)?;
    opts.validate()?;
    let bx = env.box_spec();
    if let Some(&v) = infected.iter().chain(removed).find(|&&v| !bx.contains(v)) {
        return invalid(format!("vertex {v} outside the box"));
    }
    if mode != Mode::Zeta && !removed.is_empty() {
        return invalid("removed vertices only exist in mode zeta");
    }
    let mut rng = stream(seed, Stream::Process, 0);
    Ok(engine::simulate(env, mode, infected, removed, lambda, opts, &mut rng))
}

/// A field with one vertex's weight overridden.
struct Pinned<'a, W: WeightSource> {
    inner: &'a W,
    vertex: Vertex,
    value: f64,
}

impl<W: WeightSource> WeightSource for Pinned<'_, W> {
    fn box_spec(&self) -> &BoxSpec {
        self.inner.box_spec()
    }

    #[inline]
    fn weight(&self, v: Vertex) -> f64 {
        if v == self.vertex {
            self.value
        } else {
            self.inner.weight(v)
        }
    }
}

/// Smallest box side for estimating `f_t` with the default slack of 3.
pub fn default_side_for(t: f64) -> usize {
    (t.ceil() as usize).max(1) + 3
}

/// Annealed estimate of `f_t = E[rho(x) 1{eta_t(x) = 1}]` from the
/// all-infected start, observed at the box apex (whose backward cone is the
/// whole box). The apex weight is stratified over the support table:
/// `f_t = sum_i p_i a_i P(eta_t(x)=1 | rho(x)=a_i)`, with replicates split in
/// proportion to `p_i a_i`. At `t = 0` this returns `E rho` exactly.
pub fn f_t_estimate(
    dist: &WeightDistribution,
    box_spec: &BoxSpec,
    lambda: f64,
    t: f64,
    reps: usize,
    seed: u64,
) -> Result<Estimate> {
    check_lambda(lambda)?;
    if !(t >= 0.0 && t.is_finite()) {
        return invalid(format!("time {t} must be finite and non-negative"));
    }
    if reps < 2 {
        return invalid("need at least 2 replicates");
    }
    box_spec.ensure_dense()?;
    let strata: Vec<(usize, f64, f64)> = dist
        .values()
        .iter()
        .zip(dist.probs())
        .enumerate()
        .filter(|(_, (&a, &p))| a > 0.0 && p > 0.0)
        .map(|(i, (&a, &p))| (i, a, p))
        .collect();
    if t == 0.0 {
        let value = dist.values().iter().zip(dist.probs()).map(|(a, p)| a * p).sum();
        return Ok(Estimate { value, se: 0.0 });
    }
    let mass: f64 = strata.iter().map(|(_, a, p)| a * p).sum();
    let apex = box_spec.apex();
    let all: Vec<Vertex> = (0..box_spec.n_vertices()).collect();
    let opts = RunOptions::horizon(t);

    let mut value = 0.0;
    let mut var = 0.0;
    for &(i, a, p) in &strata {
        let r_i = ((reps as f64 * a * p / mass).round() as usize).max(2);
        let hits: Vec<bool> = (0..r_i)
            .into_par_iter()
            .map(|r| {
                let index = ((i as u64) << 32) | r as u64;
                let field = LazyField::new(dist, box_spec.clone(), derive_seed(seed, Stream::Field, index));
                let pinned = Pinned { inner: &field, vertex: apex, value: a };
                let res = run_from(
                    &pinned,
                    Mode::Eta,
                    &all,
                    &[],
                    lambda,
                    &opts,
                    derive_seed(seed, Stream::Process, index),
                )?;
                Ok(res.final_infected.binary_search(&apex).is_ok())
            })
            .collect::<Result<_>>()?;
        let k = hits.iter().filter(|&&h| h).count() as f64;
        let pi = k / r_i as f64;
        value += p * a * pi;
        var += (p * a).powi(2) * pi * (1.0 - pi) / r_i as f64;
    }
    Ok(Estimate { value, se: var.sqrt() })
}
