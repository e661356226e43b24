use std::collections::HashSet;

use super::*;
use crate::env::{WeightField, WeightDistribution};
use crate::kinetics::{replay, Configuration, Mode};

fn small_rep(d: usize, side: usize, lambda: f64, h: f64, seed: u64) -> GraphicalRep {
    let dist = WeightDistribution::table(vec![0.0, 0.5, 1.5], vec![0.2, 0.4, 0.4]).unwrap();
    rep_for(&dist, &BoxSpec::new(d, side).unwrap(), lambda, h, seed, 0).unwrap()
}

/// Is there an active path from the bottom of the slab up to `(x, s)`?
/// Walks backwards in time: down `x` until its last mark before `s`, jumping
/// to the source of any arrow into `x` met on the way.
fn reaches_bottom(rep: &GraphicalRep, x: Vertex, s: f64, seen: &mut HashSet<(Vertex, u64)>) -> bool {
    if !seen.insert((x, s.to_bits())) {
        return false;
    }
    let floor = rep.marks(x).iter().copied().filter(|&m| m < s).fold(f64::NEG_INFINITY, f64::max);
    if floor == f64::NEG_INFINITY {
        return true;
    }
    let bx = rep.box_spec();
    for axis in 0..bx.d() {
        let Some(y) = bx.in_neighbor(x, axis) else { continue };
        for &u in rep.arrow_times(y, axis) {
            if u > floor && u < s && reaches_bottom(rep, y, u, seen) {
                return true;
            }
        }
    }
    false
}

#[test]
fn forward_and_reversed_dual_agree_with_path_oracle() {
    for seed in 0..400 {
        let (d, side) = if seed % 2 == 0 { (2, 3) } else { (3, 2) };
        let rep = small_rep(d, side, 1.3, 2.0, seed);
        let oracle = reaches_bottom(&rep, rep.box_spec().apex(), rep.horizon(), &mut HashSet::new());
        let (fwd, dual) = duality_check(&rep);
        assert_eq!(fwd, oracle, "seed {seed}");
        assert_eq!(dual, oracle, "seed {seed}");
    }
}

#[test]
fn forward_sweep_matches_engine_transition_rule() {
    for seed in 0..100 {
        let rep = small_rep(4, 3, 0.9, 1.5, seed);
        let bx = rep.box_spec().clone();
        let start: Vec<Vertex> = (0..bx.n_vertices()).filter(|v| v % 3 == 0).collect();
        for t in [0.0, 0.4, 1.1, 1.5] {
            let cfg = Configuration::with_infected(&bx, Mode::Eta, &start).unwrap();
            let by_replay = replay(&cfg, rep.events().iter().copied(), t);
            assert_eq!(rep.percolate_forward(&start, t).unwrap(), by_replay.infected());
            let cfg = Configuration::with_infected(&bx, Mode::EtaHat, &start).unwrap();
            let by_replay = replay(&cfg, rep.events().iter().copied(), t);
            assert_eq!(rep.percolate_dual(&start, t).unwrap(), by_replay.infected());
        }
    }
}

#[test]
fn forward_is_monotone_in_the_initial_set() {
    for seed in 0..50 {
        let rep = small_rep(2, 6, 1.0, 3.0, seed);
        let n = rep.box_spec().n_vertices();
        let a: Vec<Vertex> = (0..n).filter(|v| v % 5 == 0).collect();
        let b: Vec<Vertex> = (0..n).filter(|v| v % 5 == 0 || v % 3 == 0).collect();
        let ea = rep.percolate_forward(&a, 3.0).unwrap();
        let eb = rep.percolate_forward(&b, 3.0).unwrap();
        assert!(ea.iter().all(|v| eb.binary_search(v).is_ok()));
    }
}

#[test]
fn stream_counts_have_poisson_means() {
    let bx = BoxSpec::new(2, 4).unwrap();
    let weights: Vec<f64> = (0..bx.n_vertices()).map(|v| 0.5 + (v % 3) as f64 * 0.5).collect();
    let field = WeightField::from_weights(bx.clone(), weights.clone()).unwrap();
    let (lambda, h, reps) = (0.8, 5.0, 2000);
    let mut marks = 0usize;
    let mut arrows = vec![0usize; bx.n_vertices() * bx.d()];
    for seed in 0..reps {
        let rep = GraphicalRep::build(&field, lambda, h, seed).unwrap();
        marks += (0..bx.n_vertices()).map(|v| rep.marks(v).len()).sum::<usize>();
        for a in rep.arrows() {
            arrows[a.from * bx.d() + a.axis] += a.times.len();
        }
    }
    let expect = (reps as usize * bx.n_vertices()) as f64 * h;
    assert!((marks as f64 - expect).abs() < 4.0 * expect.sqrt());
    for v in 0..bx.n_vertices() {
        for axis in 0..bx.d() {
            let got = arrows[v * bx.d() + axis] as f64;
            let expect = match bx.out_neighbor(v, axis) {
                Some(w) => reps as f64 * lambda * weights[v] * weights[w] * h,
                None => 0.0,
            };
            assert!((got - expect).abs() <= 4.0 * expect.sqrt(), "{v} {axis}: {got} vs {expect}");
        }
    }
}

#[test]
fn zero_rate_edges_carry_no_stream() {
    let bx = BoxSpec::new(2, 1).unwrap();
    let field = WeightField::from_weights(bx.clone(), vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let rep = GraphicalRep::build(&field, 2.0, 4.0, 9).unwrap();
    assert!(rep.arrows().iter().all(|a| a.from != 1 && a.to != 1));
    assert!(rep.arrow_times(0, 1).is_empty());
    let rep = GraphicalRep::build(&field, 0.0, 4.0, 9).unwrap();
    assert!(rep.arrows().is_empty());
}

#[test]
fn hand_built_fixture() {
    // path 0 -> 1 -> 2
    let bx = BoxSpec::new(1, 2).unwrap();
    let marks = vec![vec![0.3], vec![], vec![0.9]];
    let arrows = vec![
        ArrowStream { from: 0, to: 1, axis: 0, times: vec![0.2, 0.5] },
        ArrowStream { from: 1, to: 2, axis: 0, times: vec![0.7] },
    ];
    let rep = GraphicalRep::from_streams(bx, 1.0, 1.0, marks, arrows).unwrap();
    assert_eq!(rep.percolate_forward(&[0], 0.25).unwrap(), vec![0, 1]);
    assert_eq!(rep.percolate_forward(&[0], 0.8).unwrap(), vec![1, 2]);
    assert_eq!(rep.percolate_forward(&[0], 1.0).unwrap(), vec![1]);
    // the 0.5 arrow finds 0 already recovered
    assert_eq!(rep.percolate_forward(&[0], 0.6).unwrap(), vec![1]);
    assert_eq!(rep.percolate_dual(&[2], 0.8).unwrap(), vec![1, 2]);
    assert_eq!(rep.percolate_dual(&[1], 1.0).unwrap(), vec![0, 1]);
    assert!(rep.percolate_forward(&[0], 1.5).is_err());
}

#[test]
fn reversal_maps_times_and_is_an_involution() {
    let rep = small_rep(2, 3, 1.0, 2.0, 5);
    let rev = rep.reversed();
    for v in 0..rep.box_spec().n_vertices() {
        let back: Vec<f64> = rev.marks(v).iter().rev().map(|&t| 2.0 - t).collect();
        for (a, b) in back.iter().zip(rep.marks(v)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let twice = rev.reversed();
    assert_eq!(twice.events().len(), rep.events().len());
    for (a, b) in twice.events().iter().zip(rep.events()) {
        assert_eq!(a.1, b.1);
        assert!((a.0 - b.0).abs() < 1e-12);
    }
}

#[test]
fn dump_roundtrip_is_exact() {
    let rep = small_rep(3, 2, 1.7, 2.5, 11);
    let mut buf = Vec::new();
    rep.write_dump(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().next().unwrap().contains("\"kind\":\"meta\""));
    assert!(text.lines().any(|l| l.starts_with("{\"kind\":\"arrow\",\"edge\":[[")));
    let back = GraphicalRep::read_dump(buf.as_slice()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn removal_process_stays_inside_forward_process() {
    for seed in 0..300 {
        assert!(zeta_coupling_check(&small_rep(2, 6, 2.0, 4.0, seed)), "seed {seed}");
    }
}

#[test]
fn coupling_fixture_with_removal_holds() {
    // one mark on the origin after an arrow: zeta removes the origin, eta
    // heals it; both infect vertex 1 first, so inclusion holds
    let bx = BoxSpec::new(1, 1).unwrap();
    let rep = GraphicalRep::from_streams(
        bx,
        1.0,
        1.0,
        vec![vec![0.5], vec![]],
        vec![ArrowStream { from: 0, to: 1, axis: 0, times: vec![0.2, 0.7] }],
    )
    .unwrap();
    assert!(zeta_coupling_check(&rep));
}

#[test]
fn annealed_duality_sides_are_consistent() {
    let dist = WeightDistribution::site(0.7).unwrap();
    let bx = BoxSpec::new(2, 4).unwrap();
    let res = annealed_duality(&dist, &bx, 1.5, 1.0, 4000, 3).unwrap();
    assert!(res.z_score() < 4.0, "{res:?}");
    let rep = duality_agreement(&dist, &bx, 1.5, 1.0, 300, 3).unwrap();
    assert_eq!(rep.agree, rep.reps);
}
