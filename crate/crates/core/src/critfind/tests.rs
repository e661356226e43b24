use super::*;
use crate::env::WeightField;
use crate::stats::MeanAcc;

fn small_proxy(horizon: f64) -> SurvivalProxy {
    SurvivalProxy { side: 1 << 16, horizon, infected_cap: Some(1000) }
}

#[test]
fn scan_side_fits_doubled_box() {
    for d in 1..=12 {
        let side = default_scan_side(d);
        assert!(side >= 1);
        assert!(BoxSpec::new(d, 2 * side).is_ok(), "d={d} side={side}");
    }
    assert_eq!(default_scan_side(2), 1 << 20);
}

#[test]
fn negligible_rate_is_pure_death() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let reps = 10_000;
    let est = survival_probability(&one, 2, 1e-12, &small_proxy(10.0), reps, 3).unwrap();
    assert!(est.p_hat <= 0.001, "{est:?}");
    let survivors = (est.p_hat * reps as f64).round() as u64;
    assert!(binomial_upper_tail(reps as u64, (-10f64).exp(), survivors) > 0.01);
}

#[test]
fn isolated_origin_dies_like_a_single_site() {
    // rho(O) = 0 removes every infection term out of O
    let bx = BoxSpec::new(2, 4).unwrap();
    let mut w = vec![1.0; bx.n_vertices()];
    w[bx.origin()] = 0.0;
    let field = WeightField::from_weights(bx.clone(), w).unwrap();
    let opts = RunOptions::horizon(5.0);
    let mut times = MeanAcc::default();
    for r in 0..4000u64 {
        let res = run_from(&field, Mode::Eta, &[bx.origin()], &[], 5.0, &opts, r).unwrap();
        let dead = run_from(&field, Mode::Eta, &[bx.origin()], &[], 0.0, &opts, r).unwrap();
        assert_eq!(res.extinction_time, dead.extinction_time);
        assert_eq!(res.events, 1 - res.survived as u64);
        times.push(res.extinction_time);
    }
    // E[min(Exp(1), 5)] = 1 - e^{-5}
    let e = times.estimate();
    assert!((e.value - (1.0 - (-5f64).exp())).abs() < 3.0 * e.se, "{e:?}");
}

#[test]
fn survival_is_monotone_in_rate() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let proxy = small_proxy(50.0);
    let lambdas = [0.3, 0.45, 0.6, 0.75, 0.9];
    let est: Vec<SurvivalEstimate> =
        lambdas.iter().map(|&l| survival_probability(&one, 3, l, &proxy, 1500, 9).unwrap()).collect();
    for w in est.windows(2) {
        let joint = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        assert!(w[0].p_hat <= w[1].p_hat + 3.0 * joint, "{:?} {:?}", w[0], w[1]);
    }
    assert!(est[0].p_hat < est[4].p_hat);
}

#[test]
fn same_seed_gives_same_estimate() {
    let site = WeightDistribution::site(0.7).unwrap();
    let proxy = small_proxy(20.0);
    let a = survival_runs(&site, 3, 0.8, &proxy, 300, 5).unwrap();
    let b = survival_runs(&site, 3, 0.8, &proxy, 300, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scaling_weights_is_scaling_the_rate() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let proxy = small_proxy(30.0);
    // powers of two keep lambda c^2 bit-identical to lambda * c * c
    for (c, lambda) in [(2.0, 0.09), (0.5, 1.6)] {
        let scaled = WeightDistribution::constant(c).unwrap();
        let a = survival_runs(&scaled, 3, lambda, &proxy, 1000, 17).unwrap();
        let b = survival_runs(&one, 3, lambda * c * c, &proxy, 1000, 17).unwrap();
        assert_eq!(a, b, "c={c}");
        assert!(a.iter().any(|r| r.0) && a.iter().any(|r| !r.0));
    }
}

#[test]
fn subcritical_survival_respects_envelope_floor() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let rep = verify_lower_bound(&one, 3, &[0.1], &[1.0, 2.0], &small_proxy(50.0), 10_000, 2).unwrap();
    let row = &rep.rows[0];
    assert!(row.survival.p_hat < 0.01, "{row:?}");
    assert_eq!(row.f_0.value, 1.0);
    assert_eq!(row.f_0.se, 0.0);
    assert!((row.exponent + 0.7).abs() < 1e-12);
    assert!(rep.all_ok(), "{rep:?}");
}

#[test]
fn lower_bound_rejects_rates_above_threshold() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let err = verify_lower_bound(&one, 3, &[0.1, 1.0 / 3.0], &[1.0], &small_proxy(10.0), 10, 0).unwrap_err();
    assert!(matches!(err, Error::Invalid(_)));
    let site = WeightDistribution::site(0.5).unwrap();
    assert!(verify_lower_bound(&site, 3, &[0.7], &[1.0], &small_proxy(10.0), 10, 0).is_err());
}

#[test]
fn scan_in_five_dimensions_lands_between_one_and_four() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let opts = ScanOptions { reps_per_probe: 400, tol: 0.02, check_box: false, ..ScanOptions::default() };
    let res = estimate_lambda_c(&one, 5, &SurvivalProxy::for_dim(5), &opts, 4).unwrap();
    let dl = res.d_lambda_c();
    assert!((1.0..=4.0).contains(&dl), "{res:?}");
    // the endpoints of the final bracket straddle the threshold
    let proxy = SurvivalProxy::for_dim(5);
    let lo = survival_probability(&one, 5, 1.0 / 5.0, &proxy, 400, 4).unwrap();
    let hi = survival_probability(&one, 5, 4.0 / 5.0, &proxy, 400, 4).unwrap();
    assert!(lo.p_hat < opts.theta && hi.p_hat > opts.theta, "{lo:?} {hi:?}");
    assert!(res.lambda_c + 2.0 * res.tol >= res.lower_bound);
    if res.status == ScanStatus::Converged {
        assert!(res.bracket.1 - res.bracket.0 < opts.tol);
    }
}

#[test]
fn subcritical_site_weights_fail_to_bracket() {
    // p = 0.5 is below the oriented site percolation threshold in d = 2
    let site = WeightDistribution::site(0.5).unwrap();
    let opts = ScanOptions { reps_per_probe: 200, bracket_budget: 6, check_box: false, ..ScanOptions::default() };
    match estimate_lambda_c(&site, 2, &SurvivalProxy::for_dim(2), &opts, 1) {
        Err(Error::Bracket { grid }) => {
            assert_eq!(grid.len(), 6);
            assert!(grid.windows(2).all(|w| w[1].0 > w[0].0));
            assert!(grid.iter().all(|g| g.1 < opts.theta));
        }
        other => panic!("expected a bracketing failure, got {other:?}"),
    }
}

#[test]
fn scan_rejects_bad_options() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let proxy = small_proxy(10.0);
    for opts in [
        ScanOptions { theta: 1.0, ..ScanOptions::default() },
        ScanOptions { tol: 0.0, ..ScanOptions::default() },
        ScanOptions { growth: 1.0, ..ScanOptions::default() },
    ] {
        assert!(matches!(estimate_lambda_c(&one, 3, &proxy, &opts, 0), Err(Error::Invalid(_))));
    }
    let bad = SurvivalProxy { infected_cap: Some(0), ..proxy };
    assert!(survival_probability(&one, 3, 0.5, &bad, 10, 0).is_err());
}

#[test]
fn box_check_flags_agreement() {
    let one = WeightDistribution::constant(1.0).unwrap();
    let proxy = SurvivalProxy { horizon: 40.0, ..SurvivalProxy::for_dim(4) };
    let mut est = survival_probability(&one, 4, 0.2, &proxy, 500, 6).unwrap();
    check_box_convergence(&one, &mut est, &proxy, 6).unwrap();
    assert_eq!(est.box_converged, Some(true));
}
