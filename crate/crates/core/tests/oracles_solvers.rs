use std::f64::consts::TAU;
use std::sync::Arc;

use obtorus::diagnostics::{check_energy_bound, min_eig_sigma, Recorder};
use obtorus::diffusive::{rhs_sigma, rhs_vorticity, run_diffusive, step_imex};
use obtorus::experiments::{initial_condition, InitialKind};
use obtorus::flowmap::{
    backward_trajectory, deformation_gradient, det3, offgrid_eval, run_nondiffusive, sigma_step_flowmap, Mat3, Vec3,
    VelocityField, VelocitySlab,
};
use obtorus::mollifier::build_mollifier;
use obtorus::spectral::{dealiased_product, random_divfree, random_scalar, sobolev_norm};
use obtorus::vorticity::{advect, curl};
use obtorus::{
    Field64, FlowMapSettings, ForcingSpec, Grid, PhysParams, Problem64, Rank, SimState64, SobolevIndex, Torus, Torus64,
};

fn torus(n: usize) -> Arc<Torus64> {
    Torus::new(Grid::cube(n).unwrap())
}

fn params(eps: f64) -> PhysParams {
    PhysParams::new(0.5, 10.0, 1.0, eps).unwrap()
}

fn problem(t: &Arc<Torus64>, p: PhysParams, forcing: ForcingSpec) -> Problem64 {
    Problem64::new(p, forcing, build_mollifier(0.125, t).unwrap()).unwrap()
}

fn iso(t: &Arc<Torus64>, c: f64) -> Field64 {
    Field64::tensor_fn(t, |_| [[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, c]])
}

fn rest(t: &Arc<Torus64>, sigma: Field64) -> SimState64 {
    SimState64::from_velocity(0.0, &Field64::zeros(t, Rank::Vector), sigma).unwrap()
}

fn random_state(t: &Arc<Torus64>, seed: u64) -> SimState64 {
    let (u, s) = initial_condition(InitialKind::Random, t, seed, 1.0).unwrap();
    SimState64::from_velocity(0.0, &u, s).unwrap()
}

/// Pointwise `G G^T` of a smooth random matrix field with `|k| <= 1`.
fn gram(t: &Arc<Torus64>, seed: u64) -> Field64 {
    let g: Vec<Field64> = (0..9).map(|c| random_scalar(t, 100 * seed + c, 1).unwrap()).collect();
    let mut parts = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Field64::zeros(t, Rank::Scalar);
            for k in 0..3 {
                acc = acc.add(&dealiased_product(&g[3 * i + k], &g[3 * j + k]).unwrap()).unwrap();
            }
            parts.push(acc);
        }
    }
    Field64::from_components(Rank::Tensor, &parts).unwrap()
}

// ---- vorticity and conformation tendencies ----

#[test]
fn rest_state_has_no_vorticity_tendency() {
    let t = torus(16);
    let pr = problem(&t, params(0.01), ForcingSpec::none());
    let r = rhs_vorticity(&rest(&t, iso(&t, 2.0)), &pr).unwrap();
    assert!(r.max_abs() < 1e-14);
}

#[test]
fn unstressed_tendency_is_curl_of_transport() {
    let t = torus(32);
    let pr = problem(&t, params(0.01), ForcingSpec::none());
    let u = random_divfree(&t, 8, 4, 1.0).unwrap();
    let s = SimState64::from_velocity(0.0, &u, Field64::zeros(&t, Rank::Tensor)).unwrap();
    let ju = pr.mollifier.apply(&s.u).unwrap();
    let want = curl(&advect(&ju, &s.u).unwrap()).unwrap().scale(-1.0);
    let got = rhs_vorticity(&s, &pr).unwrap();
    assert!(got.sub(&want).unwrap().l2_norm() <= 1e-8 * want.l2_norm());
}

#[test]
fn vorticity_tendency_obeys_the_source_estimate() {
    let t = torus(16);
    let forcing = ForcingSpec::sinusoidal(1.0, 1.0, 1);
    let p = params(0.01);
    let pr = problem(&t, p, forcing);
    let k = pr.mollifier.constant();
    let kg = forcing.k_g(p.beta());
    for seed in 0..5 {
        let s = random_state(&t, seed);
        let f2 = rhs_vorticity(&s, &pr).unwrap().l2_norm_squared();
        let u0 = s.u.l2_norm_squared();
        let u1 = sobolev_norm(&s.u, SobolevIndex(1)).powi(2);
        let u2 = sobolev_norm(&s.u, SobolevIndex(2)).powi(2);
        let s0 = s.sigma.l2_norm_squared();
        let termwise = 36.0 * k * k * s0 + 324.0 * k * u0 * u1 + 16.0 * k * k * u0 * u2 + 4.0 * kg * kg;
        assert!(f2 <= termwise, "seed {seed}");
        let x2 = u2 + sobolev_norm(&s.sigma, SobolevIndex(2)).powi(2);
        let bound = 36.0 * k * k * x2 + 324.0 * k * x2 * x2 + 16.0 * k * k * x2 * x2 + 4.0 * kg * kg;
        assert!(f2 <= bound);
    }
}

#[test]
fn conformation_tendency_at_rest() {
    let t = torus(8);
    let p = params(0.01);
    let pr = problem(&t, p, ForcingSpec::none());
    let r = rhs_sigma(&rest(&t, Field64::zeros(&t, Rank::Tensor)), &pr).unwrap();
    assert!(r.sub(&iso(&t, p.delta())).unwrap().max_abs() < 1e-15);
    let r = rhs_sigma(&rest(&t, iso(&t, p.delta() / p.gamma())), &pr).unwrap();
    assert!(r.max_abs() < 1e-15);
}

#[test]
fn conformation_tendency_is_symmetric() {
    let t = torus(16);
    let pr = problem(&t, params(0.01), ForcingSpec::none());
    for seed in 0..3 {
        let r = rhs_sigma(&random_state(&t, seed), &pr).unwrap();
        assert!(r.symmetry_defect().unwrap() <= 1e-12);
    }
}

// ---- IMEX stepping ----

#[test]
fn single_mode_relaxes_exactly() {
    let t = torus(16);
    let p = params(0.02);
    let pr = problem(&t, p, ForcingSpec::none());
    let k = [1.0, 2.0, 0.0];
    // I + 0.3 w w^T with w orthogonal to k: M k = k, so curl div sigma = 0
    // and the fluid stays at rest.
    let m = [[2.2, -0.6, 0.0], [-0.6, 1.3, 0.0], [0.0, 0.0, 1.0]];
    let sigma = Field64::tensor_fn(&t, |x| {
        let c = (TAU * (k[0] * x[0] + k[1] * x[1])).cos();
        m.map(|row| row.map(|v| v * c))
    });
    let dt = 0.05;
    let next = step_imex(&rest(&t, sigma.clone()), &pr, dt).unwrap();
    let k2 = TAU * TAU * (k[0] * k[0] + k[1] * k[1]);
    let decay = (-(p.eps * k2 + p.gamma()) * dt).exp();
    let src = p.delta() / p.gamma() * (1.0 - (-p.gamma() * dt).exp());
    let want = sigma.scale(decay).add(&iso(&t, src)).unwrap();
    assert!(next.sigma.sub(&want).unwrap().max_abs() < 1e-13);
    assert!(next.u.max_abs() <= 1e-15);
}

#[test]
fn step_keeps_symmetry() {
    let t = torus(16);
    let pr = problem(&t, params(0.01), ForcingSpec::none());
    let u = random_divfree(&t, 3, 5, 1.0).unwrap();
    let mut s = SimState64::from_velocity(0.0, &u, iso(&t, 1.0)).unwrap();
    for _ in 0..5 {
        s = step_imex(&s, &pr, 0.01).unwrap();
        assert!(s.sigma.symmetry_defect().unwrap() <= 1e-12);
        assert!(s.omega.mean().iter().chain(&s.u.mean()).all(|m| m.abs() <= 1e-12));
    }
}

#[test]
fn zero_horizon_returns_the_initial_state() {
    let t = torus(8);
    let init = random_state(&t, 1);
    let mut calls = 0;
    let mut s = init.clone();
    let pr = problem(&t, params(0.01), ForcingSpec::none());
    run_diffusive(&mut s, &pr, 0.0, 0.01, 1, &mut |_| {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(calls, 1);
    assert_eq!(s.sigma.spectral(), init.sigma.spectral());
    let pr0 = problem(&t, params(0.0), ForcingSpec::none());
    let mut s = init.clone();
    run_nondiffusive(&mut s, &pr0, 0.0, 0.01, 1, &FlowMapSettings::default(), &mut |_| Ok(())).unwrap();
    assert_eq!(s.omega.spectral(), init.omega.spectral());
}

#[test]
fn diffusive_relaxation_from_zero_stress() {
    let t = torus(8);
    let p = params(0.01);
    let pr = problem(&t, p, ForcingSpec::none());
    let mut s = rest(&t, Field64::zeros(&t, Rank::Tensor));
    run_diffusive(&mut s, &pr, 1.0, 0.01, 10, &mut |_| Ok(())).unwrap();
    let want = p.delta() / p.gamma() * (1.0 - (-p.gamma()).exp());
    assert!(s.sigma.sub(&iso(&t, want)).unwrap().max_abs() <= 1e-6);
    assert_eq!(s.u.max_abs(), 0.0);
}

#[test]
fn taylor_green_ledger_respects_the_energy_bound() {
    let t = torus(16);
    let pr = problem(&t, params(0.01), ForcingSpec::none());
    let (u, sigma) = initial_condition(InitialKind::TaylorGreen, &t, 0, 1.0).unwrap();
    let mut s = SimState64::from_velocity(0.0, &u, sigma).unwrap();
    let init = s.clone();
    let mut rec = Recorder::new(&pr, &init);
    run_diffusive(&mut s, &pr, 1.0, 0.01, 5, &mut |st| rec.record(st)).unwrap();
    let report = check_energy_bound(&rec.records, &rec.bounds);
    assert!(report.pass, "worst margin {:e} at t = {}", report.worst_margin, report.worst_t);
    assert_eq!(rec.records.len(), 21);
}

// ---- characteristics ----

struct Still;
impl VelocityField<f64> for Still {
    fn sample(&self, _: usize, _: Vec3<f64>, _: Vec3<f64>, _: f64) -> (Vec3<f64>, Mat3<f64>) {
        ([0.0; 3], [[0.0; 3]; 3])
    }
}

struct Drift([f64; 3]);
impl VelocityField<f64> for Drift {
    fn sample(&self, _: usize, _: Vec3<f64>, _: Vec3<f64>, _: f64) -> (Vec3<f64>, Mat3<f64>) {
        (self.0, [[0.0; 3]; 3])
    }
}

/// Solid rotation with unit angular speed about the vertical line through
/// `(1/2, 1/2)`, evaluated off the torus.
struct Rotation;
impl VelocityField<f64> for Rotation {
    fn sample(&self, _: usize, x0: Vec3<f64>, d: Vec3<f64>, _: f64) -> (Vec3<f64>, Mat3<f64>) {
        let (x, y) = (x0[0] + d[0] - 0.5, x0[1] + d[1] - 0.5);
        ([-y, x, 0.0], [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    }
}

struct Shear(f64);
impl VelocityField<f64> for Shear {
    fn sample(&self, _: usize, x0: Vec3<f64>, d: Vec3<f64>, _: f64) -> (Vec3<f64>, Mat3<f64>) {
        let mut a = [[0.0; 3]; 3];
        a[0][1] = self.0;
        ([self.0 * (x0[1] + d[1]), 0.0, 0.0], a)
    }
}

fn starts() -> Vec<Vec3<f64>> {
    vec![[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [0.9, 0.05, 0.75], [0.0, 0.0, 0.0]]
}

const IDENTITY: Mat3<f64> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[test]
fn still_fluid_leaves_points_in_place() {
    let pts = starts();
    assert_eq!(backward_trajectory(&Still, &pts, 1.0, 0.1, 1), pts);
    assert!(deformation_gradient(&Still, &pts, 1.0, 0.1, 1).iter().all(|h| *h == IDENTITY));
}

#[test]
fn uniform_drift_translates_points() {
    let c = [0.3, -0.7, 1.1];
    let dt = 0.25;
    let pts = starts();
    let dep = backward_trajectory(&Drift(c), &pts, 0.0, dt, 2);
    for (p, d) in pts.iter().zip(&dep) {
        for a in 0..3 {
            let want = (p[a] - c[a] * dt).rem_euclid(1.0);
            assert!((d[a] - want).abs() < 1e-14);
        }
    }
    assert!(deformation_gradient(&Drift(c), &pts, 0.0, dt, 2).iter().all(|h| *h == IDENTITY));
}

#[test]
fn rotation_error_is_fifth_order_per_step() {
    let p = [0.8, 0.5, 0.2];
    let err = |dt: f64| {
        let d = backward_trajectory(&Rotation, &[p], 0.0, dt, 1)[0];
        let (c, s) = (dt.cos(), (-dt).sin());
        let want = [0.5 + c * 0.3 - s * 0.0, 0.5 + s * 0.3 + c * 0.0];
        ((d[0] - want[0]).powi(2) + (d[1] - want[1]).powi(2)).sqrt()
    };
    let (e1, e2) = (err(0.2), err(0.1));
    let ratio = e1 / e2;
    assert!(e1 < 1e-6, "e1 {e1:e}");
    assert!((ratio - 32.0).abs() < 4.0, "ratio {ratio}");
    let h = deformation_gradient(&Rotation, &[p], 0.0, 0.1, 1)[0];
    assert!((det3(&h) - 1.0).abs() < 1e-6);
    assert!((h[0][0] - 0.1f64.cos()).abs() < 1e-6 && (h[1][0] - 0.1f64.sin()).abs() < 1e-6);
}

#[test]
fn linear_shear_deformation_is_exact() {
    let lambda = 1.3;
    let dt = 0.4;
    for h in deformation_gradient(&Shear(lambda), &starts(), 0.0, dt, 1) {
        let mut want = IDENTITY;
        want[0][1] = lambda * dt;
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
    }
}

// ---- conformation update ----

#[test]
fn flowmap_relaxation_of_identity() {
    let t = torus(8);
    let p = params(0.0);
    assert_eq!((p.gamma(), p.delta()), (1.0, 0.5));
    let slab = VelocitySlab::stationary(&Field64::zeros(&t, Rank::Vector), 4).unwrap();
    let out = sigma_step_flowmap(&iso(&t, 1.0), &slab, &p, 1.0, 1.0, &FlowMapSettings::default()).unwrap();
    let e = (-1.0f64).exp();
    assert!(out.sigma.sub(&iso(&t, e + 0.5 * (1.0 - e))).unwrap().max_abs() < 1e-14);
}

#[test]
fn no_relaxation_and_no_source_leaves_stress_unchanged() {
    let t = torus(8);
    let p = PhysParams { nu: 1.0, re: 1.0, wi: f64::INFINITY, eps: 0.0 };
    assert_eq!((p.gamma(), p.delta()), (0.0, 0.0));
    let sigma = gram(&t, 4);
    let slab = VelocitySlab::stationary(&Field64::zeros(&t, Rank::Vector), 4).unwrap();
    let out = sigma_step_flowmap(&sigma, &slab, &p, 0.0, 0.1, &FlowMapSettings::default()).unwrap();
    assert!(out.sigma.sub(&sigma).unwrap().max_abs() <= 1e-14 * sigma.max_abs());
}

/// The data must be well inside the 2/3 band: the composed field is truncated
/// there, and near the singular points of `G G^T` the truncated tail alone
/// would make eigenvalues negative.
#[test]
fn gram_stress_stays_positive() {
    let t = torus(32);
    let pr = problem(&t, params(0.0), ForcingSpec::none());
    for seed in 0..3 {
        let sigma = gram(&t, seed);
        assert!(min_eig_sigma(&sigma).unwrap() >= -1e-10);
        let ju = pr.mollifier.apply(&random_divfree(&t, seed, 2, 0.2).unwrap()).unwrap();
        let slab = VelocitySlab::stationary(&ju, 10).unwrap();
        let out = sigma_step_flowmap(&sigma, &slab, &pr.params, 0.0, 0.02, &FlowMapSettings::default()).unwrap();
        assert!(out.max_det_defect <= 1e-6);
        assert!(out.sigma.symmetry_defect().unwrap() <= 1e-12);
        let m = min_eig_sigma(&out.sigma).unwrap();
        assert!(m >= -1e-8, "seed {seed}: {m:e}");
    }
}

// ---- off-grid evaluation ----

#[test]
fn offgrid_reproduces_nodes() {
    let t = torus(8);
    let f = random_scalar(&t, 6, 3).unwrap();
    let pts: Vec<Vec3<f64>> = (0..t.grid().len()).map(|i| t.grid().node_position(i)).collect();
    let vals = offgrid_eval(&f, &pts);
    for (a, b) in vals[0].iter().zip(&f.physical()[0]) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn offgrid_sine() {
    let t = torus(8);
    let f = Field64::scalar_fn(&t, |x| (TAU * x[0]).sin());
    let v = offgrid_eval(&f, &[[0.3, 0.0, 0.0]])[0][0];
    assert!((v - (0.6 * std::f64::consts::PI).sin()).abs() <= 1e-10);
}

#[test]
fn offgrid_shift_theorem() {
    let t = torus(8);
    let f = random_scalar(&t, 12, 3).unwrap();
    let shift = [0.137, -0.29, 0.61];
    let grid = t.grid();
    let shifted = f.map_spectral(|s, z| {
        let k = grid.mode_wavevector(s);
        let phase = TAU * (k[0] as f64 * shift[0] + k[1] as f64 * shift[1] + k[2] as f64 * shift[2]);
        z * num_complex::Complex::from_polar(1.0, phase)
    });
    let pts: Vec<Vec3<f64>> = (0..20).map(|i| [0.05 * i as f64, 0.31 * i as f64 % 1.0, 0.77]).collect();
    let moved: Vec<Vec3<f64>> = pts.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
    let a = offgrid_eval(&f, &moved);
    let b = offgrid_eval(&shifted, &pts);
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - y).abs() <= 1e-10);
    }
}

// ---- flow-map runs ----

#[test]
fn flowmap_run_at_rest_matches_closed_form() {
    let t = torus(8);
    let p = params(0.0);
    let pr = problem(&t, p, ForcingSpec::none());
    // phi I has curl div = 0, so the fluid stays at rest.
    let sigma0 = Field64::tensor_fn(&t, |x| {
        let c = 1.0 + 0.5 * (TAU * x[0]).sin();
        [[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, c]]
    });
    let mut s = rest(&t, sigma0.clone());
    run_nondiffusive(&mut s, &pr, 1.0, 0.05, 4, &FlowMapSettings::default(), &mut |_| Ok(())).unwrap();
    let g = p.gamma();
    let want = sigma0.scale((-g).exp()).add(&iso(&t, p.delta() / g * (1.0 - (-g).exp()))).unwrap();
    assert!(s.sigma.sub(&want).unwrap().max_abs() <= 1e-6);
    assert!(s.u.max_abs() <= 1e-12);
}
