//! Study drivers: single runs, eps sweeps, stability pairs, self-convergence
//! and the identity suite.

use std::path::Path;
use std::sync::Arc;

use crate::diagnostics::{l2_distance, BoundConstants, DiagnosticsRecord, Recorder};
use crate::diffusive::{run_diffusive, ForcingSpec, Problem, SimState};
use crate::error::{Error, Result};
use crate::flowmap::run_nondiffusive;
use crate::mollifier::MollifierSpec;
use crate::scalar::Real;
use crate::spectral::{
    derivative, random_divfree, random_scalar, sobolev_norm, Field, Grid, Rank, SobolevIndex, Torus,
};
use crate::vorticity::{advect, curl, divergence, gradient, omega_nonlinear, velocity_from_vorticity};

use super::config::{Branch, RunConfig};
use super::initial::{initial_condition, InitialKind};
use super::io::{write_csv, write_snapshot};

/// Torus, mollifier and physics for `cfg`.
pub fn build_problem<T: Real>(cfg: &RunConfig) -> Result<Problem<T>> {
    cfg.validate()?;
    let grid = Grid::new(cfg.grid[0], cfg.grid[1], cfg.grid[2])?;
    let torus = Torus::new(grid);
    let j = MollifierSpec::new(cfg.mollifier_width, cfg.mollifier_oversample, &torus)?;
    Problem::new(cfg.params, cfg.forcing, j)
}

/// Initial state for `cfg` on the torus of `pr`. For
/// [`InitialKind::Equilibrium`] the amplitude multiplies the relaxed level
/// `delta / gamma`, so the default amplitude 1 gives the stationary state.
pub fn build_state<T: Real>(cfg: &RunConfig, pr: &Problem<T>) -> Result<SimState<T>> {
    let amp = match cfg.initial {
        InitialKind::Equilibrium => cfg.amplitude * pr.params.delta() / pr.params.gamma(),
        _ => cfg.amplitude,
    };
    let (u, sigma) = initial_condition(cfg.initial, pr.torus(), cfg.seed, amp)?;
    SimState::from_velocity(0.0, &u, sigma)
}

/// Diagnostics and optional state history of a finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome<T: Real> {
    pub records: Vec<DiagnosticsRecord>,
    pub bounds: BoundConstants,
    /// Largest per-node `|det - 1|` (flow-map branch only).
    pub max_det_defect: Option<f64>,
    /// States at the record times, when requested.
    pub history: Vec<SimState<T>>,
}

/// Runs `state` forward by `cfg.horizon` on the branch chosen by `cfg`.
///
/// On error `state` holds the last valid state.
pub fn simulate<T: Real>(
    cfg: &RunConfig,
    pr: &Problem<T>,
    state: &mut SimState<T>,
    keep_history: bool,
) -> Result<RunOutcome<T>> {
    let mut rec = Recorder::new(pr, state);
    let mut history = Vec::new();
    let mut sink = |s: &SimState<T>| -> Result<()> {
        rec.record(s)?;
        if keep_history {
            history.push(s.clone());
        }
        Ok(())
    };
    let det = match cfg.resolved_branch() {
        Branch::Diffusive => {
            run_diffusive(state, pr, cfg.horizon, cfg.dt, cfg.diag_stride, &mut sink)?;
            None
        }
        _ => {
            let stats = run_nondiffusive(state, pr, cfg.horizon, cfg.dt, cfg.diag_stride, &cfg.flowmap, &mut sink)?;
            Some(stats.max_det_defect)
        }
    };
    Ok(RunOutcome { records: rec.records, bounds: rec.bounds, max_det_defect: det, history })
}

/// Final state of a run without diagnostics.
pub fn final_state<T: Real>(cfg: &RunConfig, pr: &Problem<T>, init: &SimState<T>) -> Result<SimState<T>> {
    let mut s = init.clone();
    let mut sink = |_: &SimState<T>| Ok(());
    match cfg.resolved_branch() {
        Branch::Diffusive => run_diffusive(&mut s, pr, cfg.horizon, cfg.dt, usize::MAX, &mut sink)?,
        _ => {
            run_nondiffusive(&mut s, pr, cfg.horizon, cfg.dt, usize::MAX, &cfg.flowmap, &mut sink)?;
        }
    }
    Ok(s)
}

/// Single run writing `diagnostics.csv` and `final.snap` into `out` (if any).
/// A failed run leaves `last_good.snap` behind.
pub fn run_single(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome<f64>> {
    let pr = build_problem::<f64>(cfg)?;
    let mut state = build_state(cfg, &pr)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    match simulate(cfg, &pr, &mut state, false) {
        Ok(outcome) => {
            if let Some(dir) = out {
                write_csv(&dir.join("diagnostics.csv"), &outcome.records)?;
                write_snapshot(&dir.join("final.snap"), &state, cfg.params.eps)?;
            }
            Ok(outcome)
        }
        Err(e) => {
            if let Some(dir) = out {
                write_snapshot(&dir.join("last_good.snap"), &state, cfg.params.eps)?;
            }
            Err(e)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub eps: f64,
    /// `max_t (||u_eps - u_0|| + ||sigma_eps - sigma_0||)`.
    pub max_distance: f64,
    pub max_du: f64,
    pub max_dsigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// `distance(eps_i) / distance(eps_{i+1})`.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `log distance` against `log eps`.
    pub fitted_rate: f64,
    pub monotone: bool,
}

/// Compares runs at each `eps` with the `eps = 0` flow-map run.
pub fn epsilon_sweep(cfg: &RunConfig, eps_list: &[f64]) -> Result<SweepReport> {
    epsilon_sweep_with::<f64>(cfg, eps_list)
}

pub fn epsilon_sweep_with<T: Real>(cfg: &RunConfig, eps_list: &[f64]) -> Result<SweepReport> {
    if eps_list.is_empty() {
        return Err(Error::Study("empty eps list".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Study("every eps must be positive".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Study("eps list must be strictly descending".into()));
    }
    let ref_cfg = cfg.with_eps(0.0);
    let pr0 = build_problem::<T>(&ref_cfg)?;
    let init = build_state(&ref_cfg, &pr0)?;
    let mut s = init.clone();
    let reference = simulate(&ref_cfg, &pr0, &mut s, true)?.history;

    let mut entries = Vec::new();
    for &eps in eps_list {
        let c = cfg.with_eps(eps);
        let pr = pr0.with_eps(eps);
        let mut s = init.clone();
        let mut idx = 0usize;
        let (mut best, mut bu, mut bs) = (0.0f64, 0.0f64, 0.0f64);
        let mut sink = |st: &SimState<T>| -> Result<()> {
            let r = reference.get(idx).ok_or_else(|| Error::Study("record count differs from the reference".into()))?;
            let (du, ds) = l2_distance(st, r)?;
            idx += 1;
            if du + ds > best {
                best = du + ds;
            }
            bu = bu.max(du);
            bs = bs.max(ds);
            Ok(())
        };
        run_diffusive(&mut s, &pr, c.horizon, c.dt, c.diag_stride, &mut sink)?;
        entries.push(SweepEntry { eps, max_distance: best, max_du: bu, max_dsigma: bs });
    }
    let ratios: Vec<f64> = entries.windows(2).map(|w| w[0].max_distance / w[1].max_distance).collect();
    let monotone = entries.windows(2).all(|w| w[1].max_distance < w[0].max_distance);
    let fitted_rate = if entries.len() >= 2 {
        let xs: Vec<f64> = entries.iter().map(|e| e.eps.ln()).collect();
        let ys: Vec<f64> = entries.iter().map(|e| e.max_distance.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    Ok(SweepReport { entries, ratios, fitted_rate, monotone })
}

/// Perturbation directions for [`stability_pair`].
#[derive(Clone, Debug)]
pub struct Perturbation<T: Real> {
    pub velocity: Field<T>,
    pub sigma: Field<T>,
}

impl<T: Real> Perturbation<T> {
    /// Unit random solenoidal velocity and unit random symmetric tensor.
    pub fn random(torus: &Arc<Torus<T>>, seed: u64) -> Result<Self> {
        let n = torus.grid().dims().into_iter().min().unwrap_or(4);
        let k = 2usize.min((n - 1) / 3).max(1);
        let velocity = random_divfree(torus, seed.wrapping_add(1000), k, T::one())?;
        let parts: Vec<Field<T>> =
            (0..9).map(|c| random_scalar(torus, seed.wrapping_add(2000 + c as u64), k)).collect::<Result<_>>()?;
        let raw = Field::from_components(Rank::Tensor, &parts)?.symmetrized()?;
        let sigma = raw.scale(T::one() / raw.l2_norm());
        Ok(Self { velocity, sigma })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityEntry {
    pub amp: f64,
    pub initial_distance: f64,
    pub final_distance: f64,
    /// `final / initial`; `None` when `amp = 0`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub entries: Vec<StabilityEntry>,
    /// Largest relative spread of the defined ratios, `(max - min) / min`.
    pub spread: f64,
    /// `spread <= 0.2`.
    pub agree: bool,
}

/// Growth of perturbations of several amplitudes over `cfg.horizon`.
pub fn stability_pair(cfg: &RunConfig, amps: &[f64]) -> Result<StabilityReport> {
    let pr = build_problem::<f64>(cfg)?;
    let pert = Perturbation::random(pr.torus(), cfg.seed)?;
    stability_pair_with(cfg, &pr, amps, &pert)
}

pub fn stability_pair_with<T: Real>(
    cfg: &RunConfig,
    pr: &Problem<T>,
    amps: &[f64],
    pert: &Perturbation<T>,
) -> Result<StabilityReport> {
    if amps.is_empty() || amps.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
        return Err(Error::Study("amplitudes must be nonnegative".into()));
    }
    let mean = pert.velocity.mean().iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
    if mean > 0.0 {
        return Err(Error::Study(format!(
            "velocity perturbation has nonzero mean {mean:e}; initial velocities must stay mean-zero"
        )));
    }
    let init = build_state(cfg, pr)?;
    let base = final_state(cfg, pr, &init)?;
    let mut entries = Vec::new();
    for &amp in amps {
        if amp == 0.0 {
            entries.push(StabilityEntry { amp, initial_distance: 0.0, final_distance: 0.0, ratio: None });
            continue;
        }
        let a = T::lit(amp);
        let u = init.u.lincomb(T::one(), &pert.velocity, a)?;
        let sigma = init.sigma.lincomb(T::one(), &pert.sigma, a)?;
        let p0 = SimState::from_velocity(0.0, &u, sigma)?;
        let (du0, ds0) = l2_distance(&p0, &init)?;
        let end = final_state(cfg, pr, &p0)?;
        let (du, ds) = l2_distance(&end, &base)?;
        let d0 = du0.hypot(ds0);
        let d1 = du.hypot(ds);
        entries.push(StabilityEntry { amp, initial_distance: d0, final_distance: d1, ratio: Some(d1 / d0) });
    }
    let ratios: Vec<f64> = entries.iter().filter_map(|e| e.ratio).collect();
    let spread = if ratios.len() >= 2 {
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        (hi - lo) / lo
    } else {
        0.0
    };
    Ok(StabilityReport { entries, spread, agree: spread <= 0.2 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    /// `||u(dt_i) - u(dt_{i+1})||` at the final time.
    pub diffs_u: Vec<f64>,
    pub diffs_sigma: Vec<f64>,
    /// `log2(diff_i / diff_{i+1})`.
    pub orders_u: Vec<f64>,
    pub orders_sigma: Vec<f64>,
}

/// Richardson self-convergence over a halving sequence of steps.
pub fn self_convergence(cfg: &RunConfig, dts: &[f64]) -> Result<ConvergenceReport> {
    let pr = build_problem::<f64>(cfg)?;
    self_convergence_with(cfg, &pr, dts)
}

pub fn self_convergence_with<T: Real>(cfg: &RunConfig, pr: &Problem<T>, dts: &[f64]) -> Result<ConvergenceReport> {
    if dts.len() < 3 {
        return Err(Error::Study("self-convergence needs at least three steps".into()));
    }
    if dts.windows(2).any(|w| ((w[1] - 0.5 * w[0]) / w[1]).abs() > 1e-9) {
        return Err(Error::Study("step list must halve at every entry".into()));
    }
    let init = build_state(cfg, pr)?;
    let finals: Vec<SimState<T>> =
        dts.iter().map(|&dt| final_state(&RunConfig { dt, ..cfg.clone() }, pr, &init)).collect::<Result<_>>()?;
    let mut diffs_u = Vec::new();
    let mut diffs_sigma = Vec::new();
    for w in finals.windows(2) {
        let (du, ds) = l2_distance(&w[0], &w[1])?;
        diffs_u.push(du);
        diffs_sigma.push(ds);
    }
    let orders = |d: &[f64]| d.windows(2).map(|w| (w[0] / w[1]).log2()).collect::<Vec<f64>>();
    Ok(ConvergenceReport {
        dts: dts.to_vec(),
        orders_u: orders(&diffs_u),
        orders_sigma: orders(&diffs_sigma),
        diffs_u,
        diffs_sigma,
    })
}

/// One line of the identity suite.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    /// Worst relative error over the sampled fields.
    pub error: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn pass(&self) -> bool {
        self.error <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(IdentityCheck::pass)
    }
}

fn rel<T: Real>(err: &Field<T>, scale: &Field<T>) -> f64 {
    let s = scale.l2_norm().to_f64_lossy();
    let e = err.l2_norm().to_f64_lossy();
    if s == 0.0 {
        e
    } else {
        e / s
    }
}

/// Spectral, mollifier and vorticity identities on `count` random
/// band-limited fields of an `n^3` grid.
pub fn check_identities(n: usize, seed: u64, count: usize) -> Result<IdentityReport> {
    let grid = Grid::cube(n)?;
    let torus = Torus::<f64>::new(grid);
    let j = MollifierSpec::new(crate::mollifier::DEFAULT_WIDTH, 1, &torus)?;
    let k = ((n - 1) / 3).clamp(1, 4);
    let tol = 1e-8;
    let mut worst = [0.0f64; 9];
    for i in 0..count as u64 {
        let sd = seed.wrapping_mul(1_000_003).wrapping_add(17 * i);
        let phi = random_scalar(&torus, sd, k)?;
        let grad = gradient(&phi)?;
        worst[0] = worst[0].max(rel(&curl(&grad)?, &grad));

        let parts: Vec<Field<f64>> = (0..3).map(|c| random_scalar(&torus, sd + 1 + c, k)).collect::<Result<_>>()?;
        let w = Field::from_components(Rank::Vector, &parts)?;
        let cw = curl(&w)?;
        worst[1] = worst[1].max(rel(&divergence(&cw)?, &cw));

        let c = phi.spectral()[0][1].re;
        let konst = Field::constant(&torus, Rank::Scalar, &[c])?;
        worst[2] = worst[2].max(rel(&j.apply(&konst)?.sub(&konst)?, &konst));

        let u = random_divfree(&torus, sd + 5, k, 1.0)?;
        let ju = j.apply(&u)?;
        worst[3] = worst[3].max(rel(&divergence(&ju)?, &gradient(&ju.component(0))?));

        for lam in [[1u32, 0, 0], [0, 2, 1], [1, 1, 1], [2, 0, 2]] {
            let mut a = j.apply(&phi)?;
            let mut b = phi.clone();
            for (axis, &m) in lam.iter().enumerate() {
                for _ in 0..m {
                    a = derivative(&a, axis);
                    b = derivative(&b, axis);
                }
            }
            let b = j.apply(&b)?;
            worst[4] = worst[4].max(rel(&a.sub(&b)?, &a));
        }

        let v = random_divfree(&torus, sd + 6, k, 1.0)?;
        let lhs = curl(&advect(&v, &u)?)?;
        let rhs = advect(&v, &curl(&u)?)?.add(&omega_nonlinear(&v, &u)?)?;
        worst[5] = worst[5].max(rel(&lhs.sub(&rhs)?, &lhs));

        let back = velocity_from_vorticity(&curl(&u)?)?;
        worst[6] = worst[6].max(rel(&back.sub(&u)?, &u));

        let quad: f64 = phi.physical()[0].iter().map(|x| x * x).sum::<f64>() / grid.len() as f64;
        let spec = sobolev_norm(&phi, SobolevIndex(0)).powi(2);
        worst[7] = worst[7].max((quad - spec).abs() / spec);

        let adv = advect(&v, &u)?;
        worst[8] = worst[8].max(u.inner(&adv)?.abs() / (u.l2_norm() * adv.l2_norm()));
    }
    let names = [
        "curl(grad phi) = 0",
        "div(curl w) = 0",
        "J(const) = const",
        "div(J u) = 0",
        "D^lambda J = J D^lambda",
        "curl((v.grad)u) = (v.grad)curl u + Omega(v,u)",
        "velocity_from_vorticity(curl u) = u",
        "Parseval",
        "<u, (v.grad)u> = 0",
    ];
    let tols = [tol, tol, tol, tol, tol, tol, 1e-10, 1e-12, 1e-10];
    let checks = names
        .iter()
        .zip(worst)
        .zip(tols)
        .map(|((&name, error), tolerance)| IdentityCheck { name, error, tolerance })
        .collect();
    Ok(IdentityReport { checks })
}

/// Convenience: unforced configuration on an `n^3` grid.
pub fn unforced(n: usize) -> RunConfig {
    RunConfig { grid: [n, n, n], forcing: ForcingSpec::none(), ..RunConfig::default() }
}
