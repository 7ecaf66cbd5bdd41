use std::sync::Arc;

use obtorus::diagnostics::{
    bound_r1, check_energy_bound, energy_ledger, l2_distance, min_eig_sigma, trace_integral, BoundConstants,
};
use obtorus::experiments::studies::{
    build_problem, build_state, simulate, stability_pair_with, unforced, Perturbation,
};
use obtorus::experiments::{initial_condition, InitialKind, RunConfig};
use obtorus::mollifier::build_mollifier;
use obtorus::spectral::random_scalar;
use obtorus::{Error, Field64, ForcingSpec, Grid, PhysParams, Problem64, Rank, SimState64, Torus, Torus64};

fn torus(n: usize) -> Arc<Torus64> {
    Torus::new(Grid::cube(n).unwrap())
}

fn problem(t: &Arc<Torus64>) -> Problem64 {
    let p = PhysParams::new(0.5, 10.0, 1.0, 0.01).unwrap();
    Problem64::new(p, ForcingSpec::none(), build_mollifier(0.125, t).unwrap()).unwrap()
}

fn at_rest(t: &Arc<Torus64>, d: [f64; 3]) -> SimState64 {
    let s = Field64::tensor_fn(t, |_| [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]]);
    SimState64::from_velocity(0.0, &Field64::zeros(t, Rank::Vector), s).unwrap()
}

fn ledger(s: &SimState64, pr: &Problem64) -> obtorus::DiagnosticsRecord {
    let b = BoundConstants::new(pr, s);
    energy_ledger(s, pr, &b, None).unwrap()
}

#[test]
fn ledger_of_isotropic_rest_state() {
    let t = torus(8);
    let pr = problem(&t);
    let r = ledger(&at_rest(&t, [0.7; 3]), &pr);
    assert_eq!(r.kinetic, 0.0);
    assert!((r.trace_int - 2.1).abs() < 1e-14);
    let r = ledger(&at_rest(&t, [1.0, 2.0, 3.0]), &pr);
    assert!((r.trace_int - 6.0).abs() < 1e-14);
    assert_eq!(r.min_eig, 1.0);
}

#[test]
fn trace_matches_componentwise_quadrature() {
    let t = torus(16);
    for seed in 0..4 {
        let (_, s) = initial_condition(InitialKind::Random, &t, seed, 1.0).unwrap();
        let quad: f64 = [0, 4, 8].iter().map(|&c| s.physical()[c].iter().sum::<f64>() / 4096.0).sum();
        assert!((trace_integral(&s) - quad).abs() <= 1e-12);
    }
}

#[test]
fn equilibrium_passes_with_constant_margin() {
    let cfg =
        RunConfig { initial: InitialKind::Equilibrium, grid: [8, 8, 8], horizon: 0.5, diag_stride: 5, ..unforced(8) };
    let pr = build_problem::<f64>(&cfg).unwrap();
    let mut s = build_state(&cfg, &pr).unwrap();
    let out = simulate(&cfg, &pr, &mut s, false).unwrap();
    let rep = check_energy_bound(&out.records, &out.bounds);
    assert!(rep.pass);
    // lhs and rhs both grow like 3 beta delta t; the margin stays at round-off.
    let scale = out.bounds.energy_bound(cfg.horizon);
    for m in &rep.margins {
        assert!((m - rep.margins[0]).abs() <= 1e-12 * scale, "margins {:?}", rep.margins);
    }
}

#[test]
fn corrupted_kinetic_energy_fails() {
    let mut cfg = unforced(8);
    cfg.horizon = 0.2;
    cfg.diag_stride = 5;
    let pr = build_problem::<f64>(&cfg).unwrap();
    let mut s = build_state(&cfg, &pr).unwrap();
    let out = simulate(&cfg, &pr, &mut s, false).unwrap();
    assert!(check_energy_bound(&out.records, &out.bounds).pass);
    let bad: Vec<_> =
        out.records.iter().map(|r| obtorus::DiagnosticsRecord { kinetic: 10.0 * r.kinetic, ..*r }).collect();
    let rep = check_energy_bound(&bad, &out.bounds);
    assert!(!rep.pass);
    assert!(rep.worst_margin < 0.0);
}

#[test]
fn min_eig_cases() {
    let t = torus(8);
    assert_eq!(min_eig_sigma(&at_rest(&t, [1.0; 3]).sigma).unwrap(), 1.0);
    assert_eq!(min_eig_sigma(&at_rest(&t, [0.0, 1.0, 2.0]).sigma).unwrap(), 0.0);
    let t = torus(16);
    let g: Vec<Field64> = (0..9).map(|c| random_scalar(&t, 70 + c, 2).unwrap()).collect();
    let gp: Vec<&Vec<f64>> = g.iter().map(|f| &f.physical()[0]).collect();
    let nodal: Vec<Vec<f64>> = (0..9)
        .map(|c| {
            let (i, j) = (c / 3, c % 3);
            (0..4096).map(|x| (0..3).map(|k| gp[3 * i + k][x] * gp[3 * j + k][x]).sum()).collect()
        })
        .collect();
    // Nodal Gram values, checked where they were built.
    let s = Field64::from_physical(&t, Rank::Tensor, nodal).unwrap();
    assert!(min_eig_sigma(&s).unwrap() >= -1e-10);
    let skew = Field64::tensor_fn(&t, |_| [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    assert!(matches!(min_eig_sigma(&skew), Err(Error::Asymmetric { .. })));
}

#[test]
fn r1_cases() {
    let p = PhysParams::new(0.5, 10.0, 1.0, 0.0).unwrap();
    assert_eq!(bound_r1(&p, 50.0, 1.0, 2.0, 0.0, 3.0), 9.0);
    let frozen = PhysParams { nu: 1.0, re: 1.0, wi: f64::INFINITY, eps: 0.0 };
    for t in [0.0, 0.5, 3.0] {
        assert_eq!(bound_r1(&frozen, 0.0, 1.0, 2.0, t, 3.0), 9.0);
    }
    let mut last = 0.0;
    for i in 0..20 {
        let r = bound_r1(&p, 0.1, 1.0, 2.0, 0.05 * i as f64, 1.0);
        assert!(r > last);
        last = r;
    }
}

#[test]
fn l2_distance_cases() {
    let t = torus(16);
    let (u, s) = initial_condition(InitialKind::TaylorGreen, &t, 0, 1.0).unwrap();
    let a = SimState64::from_velocity(0.3, &u, s.clone()).unwrap();
    assert_eq!(l2_distance(&a, &a).unwrap(), (0.0, 0.0));
    let b = SimState64::from_velocity(0.3, &u.scale(2.0), s.clone()).unwrap();
    let (du, ds) = l2_distance(&a, &b).unwrap();
    assert!((du - a.u.l2_norm()).abs() < 1e-14 && ds == 0.0);
    let c = SimState64::from_velocity(0.4, &u, s).unwrap();
    assert!(matches!(l2_distance(&a, &c), Err(Error::TimeMismatch { .. })));
}

#[test]
fn gronwall_rate_is_amplitude_independent() {
    let mut cfg = unforced(16);
    cfg.horizon = 0.5;
    let pr = build_problem::<f64>(&cfg).unwrap();
    let pert = Perturbation::random(pr.torus(), 3).unwrap();
    let rep = stability_pair_with(&cfg, &pr, &[1e-3, 1e-4, 1e-5], &pert).unwrap();
    // du^2 + dsigma^2 = e^{C t} (initial)^2 fitted per amplitude.
    let cs: Vec<f64> = rep.entries.iter().map(|e| 2.0 * e.ratio.unwrap().ln() / cfg.horizon).collect();
    let (lo, hi) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &c| (l.min(c), h.max(c)));
    assert!(hi - lo <= 0.2 * lo.abs().max(hi.abs()), "{cs:?}");
    for e in &rep.entries {
        let c = 2.0 * e.ratio.unwrap().ln() / cfg.horizon;
        assert!(e.final_distance.powi(2) <= (c * cfg.horizon).exp() * e.initial_distance.powi(2) * (1.0 + 1e-12));
    }
}
