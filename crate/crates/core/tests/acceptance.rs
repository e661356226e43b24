//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use oriented_cp::critfind::{estimate_lambda_c, survival_runs, CritScanResult, ScanOptions, SurvivalProxy};
use oriented_cp::env::WeightDistribution;
use oriented_cp::harris::{annealed_duality, duality_agreement, zeta_violations};
use oriented_cp::kinetics::{default_side_for, f_t_estimate};
use oriented_cp::lattice::BoxSpec;
use oriented_cp::moments::{
    expected_ln_exact, mean_path_count, second_moment_ratio_exact, FactorMode, PairTransfer, TransferOperator,
};
use oriented_cp::walks::{coincidence_pattern, lemma41_functional, meet_probability, LengthConvention};
use oriented_cp::Error;

type Outcome = (bool, String);

fn site(p: f64) -> WeightDistribution {
    WeightDistribution::site(p).unwrap()
}

fn one() -> WeightDistribution {
    WeightDistribution::constant(1.0).unwrap()
}

fn c1_duality_per_realization() -> Outcome {
    let t0 = Instant::now();
    let rep = duality_agreement(&site(0.7), &BoxSpec::new(2, 6).unwrap(), 0.8, 3.0, 10_000, 101).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    (
        rep.agree == rep.reps && secs < 120.0,
        format!("{}/{} realizations agree, forward rate {:.4}, {secs:.1}s", rep.agree, rep.reps, rep.forward_rate),
    )
}

fn c2_duality_annealed() -> Outcome {
    let a = annealed_duality(&site(0.7), &BoxSpec::new(2, 6).unwrap(), 0.8, 3.0, 10_000, 102).unwrap();
    (
        a.z_score() <= 3.0,
        format!(
            "P(eta_t(apex)=1) = {:.4}, P(eta_t^O nonempty) = {:.4}, joint s.e. {:.4}, z = {:.2}",
            a.from_all.value,
            a.from_origin.value,
            a.joint_se,
            a.z_score()
        ),
    )
}

fn c3_zeta_coupling() -> Outcome {
    let bx = BoxSpec::new(2, 6).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for dist in [one(), site(0.7)] {
        let v = zeta_violations(&dist, &bx, 1.0, 3.0, 100_000, 103).unwrap();
        ok &= v == 0;
        parts.push(format!("{}: {v} violations in 100000", dist.id()));
    }
    (ok, parts.join("; "))
}

fn c4_envelope() -> Outcome {
    let d = 3;
    let lambda = 1.0 / 6.0;
    let f0 = f_t_estimate(&one(), &BoxSpec::new(d, 1).unwrap(), lambda, 0.0, 10_000, 104).unwrap();
    let mut ok = f0.value == 1.0;
    let mut parts = vec![format!("f_0 = {}", f0.value)];
    for t in [1.0, 2.0, 4.0] {
        let bx = BoxSpec::new(d, default_side_for(t)).unwrap();
        let f = f_t_estimate(&one(), &bx, lambda, t, 10_000, 104).unwrap();
        let env = f0.value * (-t / 2.0f64).exp();
        ok &= f.value <= env + 3.0 * f.se;
        parts.push(format!("t={t}: {:.4} (s.e. {:.4}) vs {:.4}", f.value, f.se, env));
    }
    (ok, parts.join("; "))
}

fn c5_first_moment() -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    let mut closed_err: f64 = 0.0;
    for (dist, label) in [(one(), "const"), (site(0.5), "site")] {
        for d in [2, 3] {
            for n in [2, 4, 6] {
                for lambda in [0.5, 1.0] {
                    let exact = expected_ln_exact(&dist, lambda, d, n).unwrap();
                    let mc = mean_path_count(&dist, lambda, d, n, 200_000, 105 + cells).unwrap();
                    let z = (mc.value - exact).abs() / mc.se;
                    worst = worst.max(z);
                    if z > 3.0 {
                        ok = false;
                        eprintln!("  criterion 5 cell {label} d={d} n={n} lambda={lambda}: exact {exact}, mc {mc:?}");
                    }
                    if label == "const" {
                        let closed = (d as f64).powi(n as i32) * (lambda / (1.0 + lambda)).powi(n as i32);
                        closed_err = closed_err.max((exact - closed).abs() / closed);
                    }
                    cells += 1;
                }
            }
        }
    }
    ok &= closed_err <= 1e-12;
    (ok, format!("{cells} cells, largest |z| = {worst:.2}; closed form relative error {closed_err:.1e}"))
}

fn all_walks(d: usize, n: usize) -> Vec<Vec<usize>> {
    (0..d.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let a = code % d;
                    code /= d;
                    a
                })
                .collect()
        })
        .collect()
}

/// The Monte Carlo ratio estimator with its random walk pairs replaced by
/// every pair, each with weight `d^{-2n}`.
fn enumerated_ratio(dist: &WeightDistribution, lambda: f64, d: usize, n: usize) -> f64 {
    let pt = PairTransfer::new(dist, lambda, FactorMode::Exact).unwrap();
    let walks = all_walks(d, n);
    let mut total = 0.0;
    for s in &walks {
        for t in &walks {
            total += pt.prefix_values(&coincidence_pattern(d, s, t))[n];
        }
    }
    let c = TransferOperator::new(dist, lambda).unwrap().chain_expectations(n)[n];
    total / (walks.len() * walks.len()) as f64 / (c * c)
}

/// `int_0^inf e^{-t} prod_i (1 - e^{-r_i t}) dt`, the probability that every
/// listed exponential beats one unit-rate clock, by composite Simpson.
fn all_beat_recovery(rates: &[f64]) -> f64 {
    let (hi, m) = (60.0, 120_000);
    let h = hi / m as f64;
    let f = |t: f64| (-t).exp() * rates.iter().map(|r| 1.0 - (-r * t).exp()).product::<f64>();
    let mut s = f(0.0) + f(hi);
    for i in 1..m {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `E|L_n|^2` over every pair of lattice paths and every weight assignment
/// on the vertices they visit.
fn brute_second_moment(dist: &WeightDistribution, lambda: f64, d: usize, n: usize) -> f64 {
    let paths: Vec<Vec<Vec<i32>>> = all_walks(d, n)
        .into_iter()
        .map(|steps| {
            let mut x = vec![0i32; d];
            let mut path = vec![x.clone()];
            for a in steps {
                x[a] += 1;
                path.push(x.clone());
            }
            path
        })
        .collect();
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let k = dist.values().len();
    let mut total = 0.0;
    for p in &paths {
        for q in &paths {
            let mut verts: Vec<Vec<i32>> = p.iter().chain(q).cloned().collect();
            verts.sort();
            verts.dedup();
            let mut edges: Vec<(usize, usize)> = [p, q]
                .iter()
                .flat_map(|path| path.windows(2))
                .map(|w| (verts.binary_search(&w[0]).unwrap(), verts.binary_search(&w[1]).unwrap()))
                .collect();
            edges.sort();
            edges.dedup();
            for code in 0..k.pow(verts.len() as u32) {
                let mut c = code;
                let mut rho = Vec::with_capacity(verts.len());
                let mut prob = 1.0;
                for _ in 0..verts.len() {
                    rho.push(dist.values()[c % k]);
                    prob *= dist.probs()[c % k];
                    c /= k;
                }
                let mut by_source: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for &(a, b) in &edges {
                    by_source.entry(a).or_default().push(lambda * rho[a] * rho[b]);
                }
                for rates in by_source.values() {
                    let mut key: Vec<u64> = rates.iter().map(|r| r.to_bits()).collect();
                    key.sort();
                    prob *= *cache.entry(key).or_insert_with(|| all_beat_recovery(rates));
                }
                total += prob;
            }
        }
    }
    total
}

fn c6_second_moment_brute_force() -> Outcome {
    let laws = [one(), site(0.5), WeightDistribution::table(vec![0.4, 1.3], vec![0.6, 0.4]).unwrap()];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for dist in &laws {
        for lambda in [0.7, 1.5] {
            for n in 1..=3 {
                let first = expected_ln_exact(dist, lambda, 2, n).unwrap();
                let brute = brute_second_moment(dist, lambda, 2, n) / (first * first);
                let enumerated = enumerated_ratio(dist, lambda, 2, n);
                let dp = second_moment_ratio_exact(dist, lambda, 2, n, FactorMode::Exact).unwrap();
                worst = worst.max((enumerated - brute).abs() / brute).max((dp - brute).abs() / brute);
                cases += 1;
            }
        }
    }
    (worst < 1e-9, format!("{cases} cases on d=2, n<=3; largest relative difference {worst:.1e} (tolerance 1e-9)"))
}

fn c7_collision_scaling() -> Outcome {
    let mut scaled = Vec::new();
    let mut parts = Vec::new();
    for d in [4, 6, 8, 10] {
        let m = meet_probability(d, 10_000, 100_000, 107).unwrap();
        parts.push(format!("d={d}: q={:.5} d^2 q={:.3}", m.tau_ge2.value, m.d2_scaled));
        scaled.push(m.d2_scaled);
    }
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0f64), |(a, b), &x| (a.min(x), b.max(x)));
    (hi / lo < 3.0, format!("{}; max/min = {:.3}", parts.join(", "), hi / lo))
}

fn c8_functional() -> Outcome {
    let rep = lemma41_functional(&one(), 0.15, 10, 20_000, 10_000, 108, LengthConvention::Literal).unwrap();
    let est_ok = rep.estimate.is_some_and(|e| e.value.is_finite());
    let low = lemma41_functional(&one(), 1.0, 1, 500, 10_000, 108, LengthConvention::Literal).unwrap();
    let ratios: Vec<String> = rep.decay_ratios.iter().map(|(m, r)| format!("m{m}->{}: {r:.3}", m + 1)).collect();
    (
        est_ok && rep.decaying && !rep.diverging && rep.censored_frac < 0.01 && low.censored_frac == 1.0 && low.estimate.is_none(),
        format!(
            "d=10 estimate {:?}, censored {:.4}, ratios [{}]; d=1 censored {}, estimate {:?}",
            rep.estimate.map(|e| e.value),
            rep.censored_frac,
            ratios.join(", "),
            low.censored_frac,
            low.estimate
        ),
    )
}

enum Scan {
    Done(CritScanResult),
    /// Every probe stayed below the threshold; the largest rate tried.
    Unbracketed(f64),
}

fn scan(dist: &WeightDistribution, d: usize, opts: &ScanOptions) -> (Scan, f64) {
    let t0 = Instant::now();
    let res = match estimate_lambda_c(dist, d, &SurvivalProxy::for_dim(d), opts, 900 + d as u64) {
        Ok(r) => Scan::Done(r),
        Err(Error::Bracket { grid }) => Scan::Unbracketed(grid.iter().map(|g| g.0).fold(0.0, f64::max)),
        Err(e) => panic!("scan d={d}: {e}"),
    };
    (res, t0.elapsed().as_secs_f64())
}

fn c9_critical_trend() -> Outcome {
    let opts = ScanOptions::default();
    let floor = 1.0 - 2.0 * opts.tol;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut prev: Option<(usize, f64, f64)> = None;
    for d in [2usize, 3, 4, 5] {
        let (res, secs) = scan(&one(), d, &opts);
        ok &= secs <= 1800.0;
        match res {
            Scan::Done(r) => {
                let (lo, hi) = r.d_bracket();
                ok &= r.d_lambda_c() >= floor;
                if let Some((pd, _, phi)) = prev {
                    // consecutive brackets may overlap but must not move up
                    if lo > phi {
                        ok = false;
                        parts.push(format!("increase from d={pd} to d={d}"));
                    }
                }
                prev = Some((d, lo, hi));
                parts.push(format!(
                    "const d={d}: d*lambda_c={:.3} [{lo:.3},{hi:.3}] {:?} box_converged={:?} {secs:.0}s",
                    r.d_lambda_c(),
                    r.status,
                    r.box_converged
                ));
            }
            Scan::Unbracketed(_) => {
                ok = false;
                parts.push(format!("const d={d}: no bracket"));
            }
        }
    }
    let p = 0.5;
    for d in [2usize, 3, 4, 5] {
        let (res, secs) = scan(&site(p), d, &opts);
        ok &= secs <= 1800.0;
        match res {
            Scan::Done(r) => {
                let v = d as f64 * p * r.lambda_c;
                ok &= v >= floor;
                parts.push(format!("site d={d}: dp*lambda_c={v:.3} {:?} {secs:.0}s", r.status));
            }
            Scan::Unbracketed(top) => {
                // survival stayed below threshold up to `top`, so lambda_c exceeds it
                let v = d as f64 * p * top;
                ok &= v >= floor;
                parts.push(format!("site d={d}: no survival up to lambda={top:.1}, dp*lambda_c > {v:.1} {secs:.0}s"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn c10_scaling_equivalence() -> Outcome {
    let d = 3;
    let proxy = SurvivalProxy { horizon: 50.0, ..SurvivalProxy::for_dim(d) };
    let mut ok = true;
    let mut parts = Vec::new();
    for c in [2.0, 3.0, 0.7] {
        let lambda = 0.45 / (c * c);
        let scaled = WeightDistribution::constant(c).unwrap();
        let a = survival_runs(&scaled, d, lambda, &proxy, 1000, 110).unwrap();
        let b = survival_runs(&one(), d, lambda * c * c, &proxy, 1000, 110).unwrap();
        let mismatches = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        ok &= mismatches == 0;
        parts.push(format!("c={c}: {mismatches} mismatches, {} survivors", a.iter().filter(|r| r.0).count()));
    }
    (ok, parts.join("; "))
}

fn ocp(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ocp")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["reps=20", "dump=true", "box.L=6", "dist.kind=site", "dist.p=0.7"]),
        ("f-decay", vec!["reps=400", "survival_horizon=10"]),
        ("duality", vec!["reps=500", "dump=true"]),
        ("zeta-check", vec!["reps=2000"]),
        ("moments", vec!["n_max=5", "walk_samples=500", "dist.kind=uniform", "dist.nodes=4"]),
        ("ratio", vec!["n=1,2,3", "walk_samples=500", "factor=paper-bound"]),
        ("walks", vec!["d=3,5", "samples=2000", "horizon=500"]),
        ("functional", vec!["samples=500", "horizon=1000"]),
        ("critscan", vec!["d=4,5", "reps_per_probe=100", "tol=0.1", "check_box=false"]),
    ];
    let mut ok = true;
    let mut checked = 0;
    let mut dirs = Vec::new();
    for (i, (name, sets)) in runs.iter().enumerate() {
        let a = tmp.path().join(format!("{name}-a"));
        let mut args = vec![*name, "--seed", "11", "--out", a.to_str().unwrap()];
        for s in sets {
            args.extend(["--set", s]);
        }
        let b = tmp.path().join(format!("{name}-b"));
        let m = a.join("manifest.cfg");
        let first = ocp(&args);
        let again = first && ocp(&[*name, "--config", m.to_str().unwrap(), "--out", b.to_str().unwrap(), "--jobs", "2"]);
        if !(first && again) {
            ok = false;
            eprintln!("  criterion 11: run {i} ({name}) failed");
            continue;
        }
        // the manifest differs only in the jobs line; outputs must not
        let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|f| f.0 != "manifest.cfg").collect::<Vec<_>>();
        let (x, y) = (dir_bytes(&a), dir_bytes(&b));
        let same_manifest = fs::read_to_string(&m).unwrap().replace("jobs = 1\n", "jobs = 2\n")
            == fs::read_to_string(b.join("manifest.cfg")).unwrap();
        if strip(x.clone()) != strip(y) || !same_manifest {
            ok = false;
            eprintln!("  criterion 11: {name} outputs differ");
        }
        checked += x.len();
        dirs.push(a.to_str().unwrap().to_string());
    }
    let listing = format!("runs={}", dirs.join(","));
    let (ra, rb) = (tmp.path().join("report-a"), tmp.path().join("report-b"));
    let report_ok = ocp(&["report", "--set", &listing, "--out", ra.to_str().unwrap()])
        && ocp(&["report", "--config", ra.join("manifest.cfg").to_str().unwrap(), "--out", rb.to_str().unwrap()])
        && dir_bytes(&ra) == dir_bytes(&rb);
    ok &= report_ok;
    (ok, format!("{} subcommands, {checked} files reproduced from their manifests; report rerun identical: {report_ok}", runs.len() + 1))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "duality per realization", c1_duality_per_realization),
        (2, "duality annealed", c2_duality_annealed),
        (3, "zeta coupling", c3_zeta_coupling),
        (4, "subcritical envelope", c4_envelope),
        (5, "first-moment oracle", c5_first_moment),
        (6, "second-moment brute force", c6_second_moment_brute_force),
        (7, "collision scaling", c7_collision_scaling),
        (8, "collision functional", c8_functional),
        (9, "critical-value trend", c9_critical_trend),
        (10, "scaling equivalence", c10_scaling_equivalence),
        (11, "end-to-end determinism", c11_determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        failed += !ok as u32;
        println!(
            "{} criterion {id:>2} ({name}): {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
