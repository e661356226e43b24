//! Event-driven exact simulation (next-reaction method).
//!
//! Each vertex carries one exponential clock for its only possible flip.
//! Clocks live in a binary heap; when a neighbor flips, the vertex's unit
//! residual is rescaled to the new rate and re-pushed under a fresh ticket,
//! and older heap entries become stale. A residual is dropped as soon as the
//! rate hits zero, and a fresh `Exp(1)` is drawn when it becomes positive
//! again, which is exact by memorylessness and lets the sparse store forget
//! idle vertices.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use super::{Mode, RunOptions, SimResult, StoreKind, TracePoint, HEALTHY, INFECTED, REMOVED};
use crate::env::WeightSource;
use crate::lattice::{BoxSpec, Vertex};
use crate::rng::{exp1, StreamRng};

/// Boxes up to this size use the dense store under [`StoreKind::Auto`].
const DENSE_AUTO_LIMIT: usize = 1 << 16;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Site {
    state: i8,
    rate: f64,
    /// Unit-rate exponential left on the clock at time `last`; NaN when no clock.
    residual: f64,
    last: f64,
    ticket: u64,
}

impl Default for Site {
    fn default() -> Self {
        Site { state: HEALTHY, rate: 0.0, residual: f64::NAN, last: 0.0, ticket: 0 }
    }
}

impl Site {
    fn idle(&self) -> bool {
        self.state == HEALTHY && self.residual.is_nan()
    }
}

pub(crate) trait SiteStore {
    fn get(&self, v: Vertex) -> Option<&Site>;
    fn entry(&mut self, v: Vertex) -> &mut Site;
    fn release(&mut self, v: Vertex);
    fn infected(&self) -> Vec<Vertex>;
}

pub(crate) struct DenseStore {
    sites: Vec<Site>,
}

impl DenseStore {
    fn new(n: usize) -> Self {
        DenseStore { sites: vec![Site::default(); n] }
    }
}

impl SiteStore for DenseStore {
    #[inline]
    fn get(&self, v: Vertex) -> Option<&Site> {
        self.sites.get(v)
    }

    #[inline]
    fn entry(&mut self, v: Vertex) -> &mut Site {
        &mut self.sites[v]
    }

    #[inline]
    fn release(&mut self, _v: Vertex) {}

    fn infected(&self) -> Vec<Vertex> {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.state == INFECTED)
            .map(|(v, _)| v)
            .collect()
    }
}

#[derive(Default)]
pub(crate) struct SparseStore {
    sites: FxHashMap<Vertex, Site>,
}

impl SiteStore for SparseStore {
    #[inline]
    fn get(&self, v: Vertex) -> Option<&Site> {
        self.sites.get(&v)
    }

    #[inline]
    fn entry(&mut self, v: Vertex) -> &mut Site {
        self.sites.entry(v).or_default()
    }

    #[inline]
    fn release(&mut self, v: Vertex) {
        if self.sites.get(&v).is_some_and(Site::idle) {
            self.sites.remove(&v);
        }
    }

    fn infected(&self) -> Vec<Vertex> {
        let mut out: Vec<Vertex> = self
            .sites
            .iter()
            .filter(|(_, s)| s.state == INFECTED)
            .map(|(&v, _)| v)
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    v: Vertex,
    ticket: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // equal times break by vertex index
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.v.cmp(&other.v))
            .then(self.ticket.cmp(&other.ticket))
    }
}

struct Engine<'a, W: WeightSource, S: SiteStore> {
    env: &'a W,
    bx: &'a BoxSpec,
    mode: Mode,
    lambda: f64,
    store: S,
    heap: BinaryHeap<Reverse<Pending>>,
    rng: &'a mut StreamRng,
    next_ticket: u64,
    t: f64,
    n_infected: usize,
    weighted: f64,
}

impl<'a, W: WeightSource, S: SiteStore> Engine<'a, W, S> {
    #[inline]
    fn state(&self, v: Vertex) -> i8 {
        self.store.get(v).map_or(HEALTHY, |s| s.state)
    }

    /// `lambda * sum_y rho(v) rho(y)` over infected infectors `y` of `v`.
    fn infection_rate(&self, v: Vertex) -> f64 {
        let rho_v = self.env.weight(v);
        if rho_v == 0.0 || self.lambda == 0.0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for axis in 0..self.bx.d() {
            let y = match self.mode {
                Mode::Eta | Mode::Zeta => self.bx.in_neighbor(v, axis),
                Mode::EtaHat => self.bx.out_neighbor(v, axis),
            };
            if let Some(y) = y {
                if self.state(y) == INFECTED {
                    sum += rho_v * self.env.weight(y);
                }
            }
        }
        self.lambda * sum
    }

    fn flip_rate(&self, v: Vertex) -> f64 {
        match self.state(v) {
            INFECTED => 1.0,
            HEALTHY => self.infection_rate(v),
            _ => 0.0,
        }
    }

    fn reschedule(&mut self, v: Vertex, rate: f64) {
        let t = self.t;
        let site = self.store.entry(v);
        let pending = !site.residual.is_nan();
        if rate == site.rate && (pending || rate == 0.0) {
            return;
        }
        if rate == 0.0 {
            site.rate = 0.0;
            site.residual = f64::NAN;
            site.ticket = 0;
            self.store.release(v);
            return;
        }
        let left = if pending {
            (site.residual - site.rate * (t - site.last)).max(0.0)
        } else {
            exp1(self.rng)
        };
        self.next_ticket += 1;
        site.residual = left;
        site.last = t;
        site.rate = rate;
        site.ticket = self.next_ticket;
        self.heap.push(Reverse(Pending { time: t + left / rate, v, ticket: self.next_ticket }));
    }

    fn refresh_targets(&mut self, v: Vertex) {
        for axis in 0..self.bx.d() {
            let w = match self.mode {
                Mode::Eta | Mode::Zeta => self.bx.out_neighbor(v, axis),
                Mode::EtaHat => self.bx.in_neighbor(v, axis),
            };
            if let Some(w) = w {
                if self.state(w) == HEALTHY {
                    let r = self.infection_rate(w);
                    self.reschedule(w, r);
                }
            }
        }
    }

    fn fire(&mut self, v: Vertex) {
        let rho = self.env.weight(v);
        let site = self.store.entry(v);
        site.residual = f64::NAN;
        site.rate = 0.0;
        site.ticket = 0;
        match site.state {
            INFECTED => {
                site.state = if self.mode == Mode::Zeta { REMOVED } else { HEALTHY };
                self.n_infected -= 1;
                self.weighted -= rho;
            }
            HEALTHY => {
                site.state = INFECTED;
                self.n_infected += 1;
                self.weighted += rho;
            }
            _ => unreachable!("removed vertices carry no clock"),
        }
        if self.n_infected == 0 {
            self.weighted = 0.0;
        }
        let r = self.flip_rate(v);
        self.reschedule(v, r);
        if self.state(v) == HEALTHY {
            self.store.release(v);
        }
        self.refresh_targets(v);
    }

    fn point(&self, t: f64) -> TracePoint {
        TracePoint { t, n_infected: self.n_infected, weighted: self.weighted }
    }
}

pub(crate) fn simulate<W: WeightSource>(
    env: &W,
    mode: Mode,
    infected: &[Vertex],
    removed: &[Vertex],
    lambda: f64,
    opts: &RunOptions,
    rng: &mut StreamRng,
) -> SimResult {
    let n = env.box_spec().n_vertices();
    let dense = match opts.store {
        StoreKind::Dense => true,
        StoreKind::Sparse => false,
        StoreKind::Auto => n <= DENSE_AUTO_LIMIT,
    };
    if dense {
        simulate_with(DenseStore::new(n), env, mode, infected, removed, lambda, opts, rng)
    } else {
        simulate_with(SparseStore::default(), env, mode, infected, removed, lambda, opts, rng)
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_with<W: WeightSource, S: SiteStore>(
    store: S,
    env: &W,
    mode: Mode,
    infected: &[Vertex],
    removed: &[Vertex],
    lambda: f64,
    opts: &RunOptions,
    rng: &mut StreamRng,
) -> SimResult {
    let mut eng = Engine {
        env,
        bx: env.box_spec(),
        mode,
        lambda,
        store,
        heap: BinaryHeap::new(),
        rng,
        next_ticket: 0,
        t: 0.0,
        n_infected: 0,
        weighted: 0.0,
    };
    for &v in removed {
        eng.store.entry(v).state = REMOVED;
    }
    for &v in infected {
        let site = eng.store.entry(v);
        if site.state != INFECTED {
            site.state = INFECTED;
            eng.n_infected += 1;
            eng.weighted += env.weight(v);
        }
    }
    for &v in infected {
        eng.reschedule(v, 1.0);
    }
    for &v in infected {
        eng.refresh_targets(v);
    }

    let horizon = opts.horizon;
    let mut samples = opts.sample_times.iter().copied().peekable();
    let mut trace = Vec::with_capacity(opts.sample_times.len());
    let mut events = 0u64;
    let mut extinct = eng.n_infected == 0;
    let mut capped = false;

    while !extinct {
        let Some(Reverse(p)) = eng.heap.pop() else { break };
        if eng.store.get(p.v).map_or(true, |s| s.ticket != p.ticket) {
            continue;
        }
        if p.time > horizon {
            break;
        }
        while let Some(&s) = samples.peek() {
            if s >= p.time {
                break;
            }
            trace.push(eng.point(s));
            samples.next();
        }
        eng.t = p.time;
        eng.fire(p.v);
        events += 1;
        if eng.n_infected == 0 {
            extinct = true;
        } else if opts.infected_cap.is_some_and(|cap| eng.n_infected >= cap) {
            capped = true;
            break;
        }
    }

    if !capped {
        for s in samples {
            if s > horizon {
                break;
            }
            trace.push(eng.point(s));
        }
    }
    let survived = !extinct;
    SimResult {
        survived,
        extinction_time: if extinct { eng.t } else { horizon },
        trace,
        final_infected: eng.store.infected(),
        capped,
        events,
    }
}
