//! One resolved parameter set per subcommand, and how each one runs.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::svg::{Chart, Point, Series};
use super::{fmt_f, Artifacts, Resolver, MANIFEST};
use crate::critfind::{
    default_scan_side, estimate_lambda_c, verify_lower_bound, CritScanResult, ScanOptions, SurvivalProxy,
};
use crate::env::{moments, LazyField, WeightDistribution};
use crate::error::{invalid, Error, Result};
use crate::harris::{annealed_duality, duality_agreement, rep_for, zeta_violations, AnnealedDuality, DualityReport};
use crate::kinetics::{default_side_for, f_t_estimate, run_from, Mode, RunOptions, SimResult};
use crate::lattice::BoxSpec;
use crate::moments::{
    expected_ln_exact, second_moment_ratio_exact, second_moment_ratio_profile, survival_lower_bound, FactorMode,
};
use crate::rng::{derive_seed, Stream};
use crate::walks::{lemma41_functional, meet_probability, LengthConvention};

/// Parses an enum setting through its `FromStr`, keeping the raw text.
fn choice<T>(r: &mut Resolver, key: &str, default: &str) -> Result<T>
where
    T: std::str::FromStr<Err = Error>,
{
    let s: String = r.value(key, default.to_string())?;
    s.parse()
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        invalid(format!("{key} must be positive and finite, got {v}"))
    }
}

pub struct Simulate {
    seed: u64,
    bx: BoxSpec,
    dist: WeightDistribution,
    lambda: f64,
    mode: Mode,
    start_all: bool,
    horizon: f64,
    reps: usize,
    sample_times: Vec<f64>,
    cap: Option<usize>,
    dump: bool,
}

pub struct FDecay {
    seed: u64,
    d: usize,
    dist: WeightDistribution,
    lambda: f64,
    times: Vec<f64>,
    reps: usize,
    survival_horizon: Option<f64>,
    cap: usize,
}

pub struct Duality {
    seed: u64,
    bx: BoxSpec,
    dist: WeightDistribution,
    lambda: f64,
    horizon: f64,
    reps: usize,
    annealed: bool,
    dump: bool,
}

pub struct ZetaCheck {
    seed: u64,
    bx: BoxSpec,
    dist: WeightDistribution,
    lambda: f64,
    horizon: f64,
    reps: usize,
}

pub struct Moments {
    seed: u64,
    d: usize,
    dist: WeightDistribution,
    lambda: f64,
    n_max: usize,
    walk_samples: usize,
}

pub struct Ratio {
    seed: u64,
    d: usize,
    dist: WeightDistribution,
    lambda: f64,
    ns: Vec<usize>,
    walk_samples: usize,
    factor: FactorMode,
    factor_name: String,
    exact: bool,
}

pub struct Walks {
    seed: u64,
    ds: Vec<usize>,
    horizon: usize,
    samples: usize,
}

pub struct Functional {
    seed: u64,
    d: usize,
    dist: WeightDistribution,
    lambda: f64,
    samples: usize,
    horizon: usize,
    convention: LengthConvention,
}

pub struct CritScan {
    seed: u64,
    ds: Vec<usize>,
    dist: WeightDistribution,
    side: Option<usize>,
    horizon: f64,
    cap: Option<usize>,
    opts: ScanOptions,
}

pub struct Report {
    runs: Vec<String>,
}

pub enum Plan {
    Simulate(Simulate),
    FDecay(FDecay),
    Duality(Duality),
    ZetaCheck(ZetaCheck),
    Moments(Moments),
    Ratio(Ratio),
    Walks(Walks),
    Functional(Functional),
    CritScan(CritScan),
    Report(Report),
}

fn box_keys(r: &mut Resolver, d: usize, side: usize) -> Result<BoxSpec> {
    let d = r.value("box.d", d)?;
    let side = r.value("box.L", side)?;
    BoxSpec::new(d, side)
}

impl Plan {
    pub fn resolve(name: &str, r: &mut Resolver) -> Result<Plan> {
        let seed: u64 = r.value("seed", 0)?;
        let _jobs: usize = r.value("jobs", 1)?;
        Ok(match name {
            "simulate" => {
                let bx = box_keys(r, 2, 20)?;
                let dist = r.dist()?;
                let lambda: f64 = r.value("lambda", 1.0)?;
                let mode = choice(r, "mode", "eta")?;
                let start: String = r.value("start", "origin".to_string())?;
                let start_all = match start.as_str() {
                    "origin" => false,
                    "all" => true,
                    s => return invalid(format!("start {s:?} is not origin or all")),
                };
                let horizon = positive("horizon", r.value("horizon", 10.0)?)?;
                let reps = r.value("reps", 1)?;
                let default_times: Vec<f64> = (0..=10).map(|i| horizon * i as f64 / 10.0).collect();
                let sample_times = r.list("sample_times", &default_times)?;
                let cap = r.optional("cap", None)?;
                let dump = r.value("dump", false)?;
                Plan::Simulate(Simulate {
                    seed,
                    bx,
                    dist,
                    lambda,
                    mode,
                    start_all,
                    horizon,
                    reps,
                    sample_times,
                    cap,
                    dump,
                })
            }
            "f-decay" => Plan::FDecay(FDecay {
                seed,
                d: r.value("box.d", 3)?,
                dist: r.dist()?,
                lambda: positive("lambda", r.value("lambda", 0.1)?)?,
                times: r.list("times", &[0.0, 1.0, 2.0, 4.0])?,
                reps: r.value("reps", 10_000)?,
                survival_horizon: r.optional("survival_horizon", Some(50.0))?,
                cap: r.value("cap", 1000)?,
            }),
            "duality" => Plan::Duality(Duality {
                seed,
                bx: box_keys(r, 2, 6)?,
                dist: r.dist()?,
                lambda: r.value("lambda", 0.8)?,
                horizon: positive("horizon", r.value("horizon", 3.0)?)?,
                reps: r.value("reps", 10_000)?,
                annealed: r.value("annealed", true)?,
                dump: r.value("dump", false)?,
            }),
            "zeta-check" => Plan::ZetaCheck(ZetaCheck {
                seed,
                bx: box_keys(r, 2, 6)?,
                dist: r.dist()?,
                lambda: r.value("lambda", 1.0)?,
                horizon: positive("horizon", r.value("horizon", 3.0)?)?,
                reps: r.value("reps", 100_000)?,
            }),
            "moments" => Plan::Moments(Moments {
                seed,
                d: r.value("d", 2)?,
                dist: r.dist()?,
                lambda: positive("lambda", r.value("lambda", 1.0)?)?,
                n_max: r.value("n_max", 8)?,
                walk_samples: r.value("walk_samples", 2000)?,
            }),
            "ratio" => {
                let d = r.value("d", 2)?;
                let dist = r.dist()?;
                let lambda = positive("lambda", r.value("lambda", 1.0)?)?;
                let ns = r.list("n", &[1usize, 2, 3, 4])?;
                let walk_samples = r.value("walk_samples", 4000)?;
                let factor_name: String = r.value("factor", "exact".to_string())?;
                let factor = factor_name.parse()?;
                let exact = r.value("exact", true)?;
                Plan::Ratio(Ratio { seed, d, dist, lambda, ns, walk_samples, factor, factor_name, exact })
            }
            "walks" => Plan::Walks(Walks {
                seed,
                ds: r.list("d", &[2usize, 3, 4, 6, 8, 10])?,
                horizon: r.value("horizon", crate::walks::DEFAULT_HORIZON)?,
                samples: r.value("samples", 100_000)?,
            }),
            "functional" => Plan::Functional(Functional {
                seed,
                d: r.value("d", 10)?,
                dist: r.dist()?,
                lambda: positive("lambda", r.value("lambda", 0.15)?)?,
                samples: r.value("samples", 20_000)?,
                horizon: r.value("horizon", crate::walks::DEFAULT_HORIZON)?,
                convention: choice(r, "convention", "literal")?,
            }),
            "critscan" => {
                let ds = r.list("d", &[2usize, 3, 4, 5])?;
                let dist = r.dist()?;
                let side = r.optional("box.L", None)?;
                let horizon = positive("horizon", r.value("horizon", 200.0)?)?;
                let cap = r.optional("cap", Some(1000))?;
                let def = ScanOptions::default();
                let opts = ScanOptions {
                    theta: r.value("theta", def.theta)?,
                    tol: r.value("tol", def.tol)?,
                    reps_per_probe: r.value("reps_per_probe", def.reps_per_probe)?,
                    bracket_budget: r.value("bracket_budget", def.bracket_budget)?,
                    growth: r.value("growth", def.growth)?,
                    check_box: r.value("check_box", def.check_box)?,
                };
                Plan::CritScan(CritScan { seed, ds, dist, side, horizon, cap, opts })
            }
            "report" => {
                let runs: Vec<String> = r.list("runs", &[String::from("none")])?;
                if runs == ["none"] {
                    return invalid("report needs runs = dir1,dir2,...");
                }
                Plan::Report(Report { runs })
            }
            other => return invalid(format!("unknown subcommand {other:?}")),
        })
    }

    pub fn execute(self, out: &mut Artifacts) -> Result<()> {
        match self {
            Plan::Simulate(p) => p.run(out),
            Plan::FDecay(p) => p.run(out),
            Plan::Duality(p) => p.run(out),
            Plan::ZetaCheck(p) => p.run(out),
            Plan::Moments(p) => p.run(out),
            Plan::Ratio(p) => p.run(out),
            Plan::Walks(p) => p.run(out),
            Plan::Functional(p) => p.run(out),
            Plan::CritScan(p) => p.run(out),
            Plan::Report(p) => p.run(out),
        }
    }
}

impl Simulate {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        if self.reps == 0 {
            return invalid("reps must be positive");
        }
        if self.start_all {
            self.bx.ensure_dense()?;
        }
        let opts = RunOptions {
            sample_times: self.sample_times.clone(),
            infected_cap: self.cap,
            ..RunOptions::horizon(self.horizon)
        };
        let all: Vec<usize> = if self.start_all { (0..self.bx.n_vertices()).collect() } else { vec![self.bx.origin()] };
        let results: Vec<SimResult> = (0..self.reps as u64)
            .into_par_iter()
            .map(|r| {
                let field = LazyField::new(&self.dist, self.bx.clone(), derive_seed(self.seed, Stream::Field, r));
                let seed = derive_seed(self.seed, Stream::Process, r);
                run_from(&field, self.mode, &all, &[], self.lambda, &opts, seed)
            })
            .collect::<Result<_>>()?;
        let mut trace = Vec::new();
        let mut runs = Vec::new();
        for (i, res) in results.iter().enumerate() {
            for tp in &res.trace {
                trace.push(vec![i.to_string(), fmt_f(tp.t), tp.n_infected.to_string(), fmt_f(tp.weighted)]);
            }
            runs.push(vec![
                i.to_string(),
                res.survived.to_string(),
                fmt_f(res.extinction_time),
                res.events.to_string(),
                res.capped.to_string(),
            ]);
        }
        out.csv("trace.csv", &["run_id", "t", "n_infected", "rho_weighted_occupancy"], &trace);
        out.csv("runs.csv", &["run_id", "survived", "extinction_time", "events", "capped"], &runs);
        if self.dump {
            let rep = rep_for(&self.dist, &self.bx, self.lambda, self.horizon, self.seed, 0)?;
            let mut bytes = Vec::new();
            rep.write_dump(&mut bytes)?;
            out.raw("graphical_rep.jsonl", bytes);
        }
        Ok(())
    }
}

impl FDecay {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let mo = moments(&self.dist);
        let threshold = 1.0 / (self.d as f64 * mo.second);
        let exponent = self.d as f64 * self.lambda * mo.second - 1.0;
        let header = ["d", "dist_id", "lambda", "t", "L", "reps", "f_hat", "se", "envelope", "below_envelope"];
        let id = self.dist.id();
        let row = |t: f64, f: crate::stats::Estimate, env: f64| {
            vec![
                self.d.to_string(),
                id.clone(),
                fmt_f(self.lambda),
                fmt_f(t),
                default_side_for(t).to_string(),
                self.reps.to_string(),
                fmt_f(f.value),
                fmt_f(f.se),
                fmt_f(env),
                (f.value <= env + 3.0 * f.se).to_string(),
            ]
        };
        match self.survival_horizon {
            Some(h) if self.lambda < threshold => {
                let proxy = SurvivalProxy { side: default_scan_side(self.d), horizon: h, infected_cap: Some(self.cap) };
                let rep = verify_lower_bound(&self.dist, self.d, &[self.lambda], &self.times, &proxy, self.reps, self.seed)?;
                let rows: Vec<Vec<String>> =
                    rep.rows[0].checks.iter().map(|c| row(c.t, c.f_t, c.envelope)).collect();
                out.csv("f_decay.csv", &header, &rows);
                out.json("lower_bound.json", &rep)?;
            }
            _ => {
                let seed = derive_seed(self.seed, Stream::Process, 0);
                let f0 = f_t_estimate(&self.dist, &BoxSpec::new(self.d, 1)?, self.lambda, 0.0, 2, seed)?;
                let mut rows = Vec::new();
                for &t in &self.times {
                    let bx = BoxSpec::new(self.d, default_side_for(t))?;
                    let f = f_t_estimate(&self.dist, &bx, self.lambda, t, self.reps, seed)?;
                    rows.push(row(t, f, f0.value * (exponent * t).exp()));
                }
                out.csv("f_decay.csv", &header, &rows);
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DualityOut {
    d: usize,
    side: usize,
    dist_id: String,
    lambda: f64,
    horizon: f64,
    per_realization: DualityReport,
    agreement_rate: f64,
    annealed: Option<AnnealedDuality>,
    annealed_z: Option<f64>,
}

impl Duality {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let per = duality_agreement(&self.dist, &self.bx, self.lambda, self.horizon, self.reps, self.seed)?;
        let annealed = if self.annealed {
            Some(annealed_duality(&self.dist, &self.bx, self.lambda, self.horizon, self.reps, self.seed)?)
        } else {
            None
        };
        out.json(
            "duality.json",
            &DualityOut {
                d: self.bx.d(),
                side: self.bx.side(),
                dist_id: self.dist.id(),
                lambda: self.lambda,
                horizon: self.horizon,
                agreement_rate: per.agreement_rate(),
                per_realization: per,
                annealed_z: annealed.as_ref().map(|a| a.z_score()),
                annealed,
            },
        )?;
        if self.dump {
            let rep = rep_for(&self.dist, &self.bx, self.lambda, self.horizon, self.seed, 0)?;
            let mut bytes = Vec::new();
            rep.write_dump(&mut bytes)?;
            out.raw("graphical_rep.jsonl", bytes);
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ZetaOut {
    d: usize,
    side: usize,
    dist_id: String,
    lambda: f64,
    horizon: f64,
    reps: usize,
    violations: usize,
}

impl ZetaCheck {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let violations = zeta_violations(&self.dist, &self.bx, self.lambda, self.horizon, self.reps, self.seed)?;
        out.json(
            "zeta.json",
            &ZetaOut {
                d: self.bx.d(),
                side: self.bx.side(),
                dist_id: self.dist.id(),
                lambda: self.lambda,
                horizon: self.horizon,
                reps: self.reps,
                violations,
            },
        )
    }
}

impl Moments {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let sb = survival_lower_bound(&self.dist, self.lambda, self.d, self.n_max, self.walk_samples, self.seed)?;
        let id = self.dist.id();
        let mut rows = Vec::new();
        for b in sb.profile.iter().filter(|b| b.n >= 1) {
            rows.push(vec![
                self.d.to_string(),
                b.n.to_string(),
                fmt_f(self.lambda),
                id.clone(),
                fmt_f(expected_ln_exact(&self.dist, self.lambda, self.d, b.n)?),
                fmt_f(b.ratio),
                fmt_f(b.ratio_se),
                fmt_f(b.lower_bound),
            ]);
        }
        out.csv(
            "moments.csv",
            &["d", "n", "lambda", "dist_id", "E_Ln_exact", "ratio_mc", "ratio_se", "survival_lb"],
            &rows,
        );
        Ok(())
    }
}

impl Ratio {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let n_max = *self.ns.iter().max().expect("list is non-empty");
        let profile =
            second_moment_ratio_profile(&self.dist, self.lambda, self.d, n_max, self.walk_samples, self.seed, self.factor)?;
        let id = self.dist.id();
        let mut rows = Vec::new();
        for &n in &self.ns {
            let exact = if self.exact {
                fmt_f(second_moment_ratio_exact(&self.dist, self.lambda, self.d, n, self.factor)?)
            } else {
                String::new()
            };
            let mc = &profile[n];
            rows.push(vec![
                self.d.to_string(),
                n.to_string(),
                fmt_f(self.lambda),
                id.clone(),
                self.factor_name.clone(),
                exact,
                fmt_f(mc.ratio),
                fmt_f(mc.se),
            ]);
        }
        out.csv(
            "ratio.csv",
            &["d", "n", "lambda", "dist_id", "factor", "ratio_exact", "ratio_mc", "ratio_se"],
            &rows,
        );
        Ok(())
    }
}

impl Walks {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let mut rows = Vec::new();
        for &d in &self.ds {
            let m = meet_probability(d, self.horizon, self.samples, self.seed)?;
            rows.push(vec![
                d.to_string(),
                self.horizon.to_string(),
                self.samples.to_string(),
                fmt_f(m.tau_ge2.value),
                fmt_f(m.tau_ge2.se),
                fmt_f(m.d2_scaled),
                fmt_f(m.censored_frac),
            ]);
        }
        out.csv(
            "walks.csv",
            &["d", "horizon", "samples", "tau_ge2_prob", "se", "d2_scaled", "censored_frac"],
            &rows,
        );
        Ok(())
    }
}

impl Functional {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let rep = lemma41_functional(&self.dist, self.lambda, self.d, self.samples, self.horizon, self.seed, self.convention)?;
        out.json("functional.json", &rep)
    }
}

#[derive(Serialize)]
struct ScanEntry {
    d: usize,
    result: Option<CritScanResult>,
    /// `(lambda, p_hat)` probes of a scan that never bracketed.
    bracket_failure: Option<Vec<(f64, f64)>>,
}

impl CritScan {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let mo = moments(&self.dist);
        let id = self.dist.id();
        let mut entries = Vec::new();
        let mut rows = Vec::new();
        for &d in &self.ds {
            let proxy = SurvivalProxy {
                side: self.side.unwrap_or_else(|| default_scan_side(d)),
                horizon: self.horizon,
                infected_cap: self.cap,
            };
            let seed = derive_seed(self.seed, Stream::Process, d as u64);
            let mut row = |lambda: f64, p: f64, se: f64, reps: usize| {
                rows.push(vec![
                    d.to_string(),
                    id.clone(),
                    fmt_f(lambda),
                    fmt_f(p),
                    fmt_f(se),
                    proxy.side.to_string(),
                    fmt_f(proxy.horizon),
                    reps.to_string(),
                ]);
            };
            match estimate_lambda_c(&self.dist, d, &proxy, &self.opts, seed) {
                Ok(res) => {
                    for p in &res.trace {
                        row(p.lambda, p.p_hat, p.se, p.reps);
                    }
                    entries.push(ScanEntry { d, result: Some(res), bracket_failure: None });
                }
                Err(Error::Bracket { grid }) => {
                    for &(l, p) in &grid {
                        let se = (p * (1.0 - p) / self.opts.reps_per_probe as f64).sqrt();
                        row(l, p, se, self.opts.reps_per_probe);
                    }
                    entries.push(ScanEntry { d, result: None, bracket_failure: Some(grid) });
                }
                Err(e) => return Err(e),
            }
        }
        out.csv("critscan.csv", &["d", "dist_id", "lambda", "p_hat", "se", "L", "horizon", "reps"], &rows);
        out.json("critscan.json", &entries)?;
        let points = entries
            .iter()
            .filter_map(|e| e.result.as_ref())
            .map(|r| Point { x: r.d as f64, y: r.d_lambda_c(), bar: Some(r.d_bracket()) })
            .collect();
        let failed: Vec<String> = entries.iter().filter(|e| e.result.is_none()).map(|e| e.d.to_string()).collect();
        let mut title = format!("critical scan, {id}");
        if !failed.is_empty() {
            title.push_str(&format!(" (no bracket at d = {})", failed.join(", ")));
        }
        let chart = Chart {
            title,
            x_label: "d".into(),
            y_label: "d * lambda_c estimate".into(),
            series: vec![Series { label: "d * lambda_c, final bracket".into(), points }],
            references: vec![(1.0 / mo.second, "1 / E rho^2".into())],
        };
        out.raw("critscan.svg", chart.render().into_bytes());
        Ok(())
    }
}

impl Report {
    fn run(self, out: &mut Artifacts) -> Result<()> {
        let mut rows = Vec::new();
        let mut md = String::from("# Run report\n\n| run | subcommand | manifest hash | files |\n|---|---|---|---|\n");
        for run in &self.runs {
            let dir = PathBuf::from(run);
            let manifest = fs::read_to_string(dir.join(MANIFEST))
                .map_err(|e| Error::Invalid(format!("{run}: no readable {MANIFEST}: {e}")))?;
            let hash = manifest
                .lines()
                .find_map(|l| l.strip_prefix("# hash "))
                .ok_or_else(|| Error::Invalid(format!("{run}: manifest has no hash line")))?
                .to_string();
            let sub = manifest
                .lines()
                .find_map(|l| l.strip_prefix("subcommand = "))
                .unwrap_or("?")
                .to_string();
            let mut names: Vec<String> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            names.sort();
            for name in &names {
                let bytes = fs::read(dir.join(name))?;
                let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                rows.push(vec![
                    run.clone(),
                    sub.clone(),
                    hash.clone(),
                    name.clone(),
                    bytes.len().to_string(),
                    digest,
                ]);
            }
            md.push_str(&format!("| {run} | {sub} | {hash} | {} |\n", names.join(" ")));
        }
        out.csv("report.csv", &["run", "subcommand", "manifest_hash", "file", "bytes", "sha256"], &rows);
        out.raw("report.md", md.into_bytes());
        Ok(())
    }
}
