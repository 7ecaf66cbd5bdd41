//! Energy ledger, positivity monitor, a-priori bounds and L² comparators.

use crate::diffusive::{PhysParams, Problem, SimState};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{sobolev_norm, Field, Rank, SobolevIndex};

/// CSV header matching [`DiagnosticsRecord::csv_row`].
pub const CSV_HEADER: &str =
    "t,kinetic,trace_int,diss_cum,trace_cum,forcing_cum,min_eig,u_h2,sigma_h2,sigma_l2,bound_e1t_e2,bound_r1";

/// Relative slack granted to the energy inequality for round-off.
pub const ENERGY_ROUNDOFF: f64 = 1.0e4 * f64::EPSILON;

/// One row of the diagnostic time series.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `||u||^2 / 2`.
    pub kinetic: f64,
    /// `int tr sigma`.
    pub trace_int: f64,
    /// `int_0^t ||grad u||^2`.
    pub diss_cum: f64,
    /// `int_0^t int tr sigma`.
    pub trace_cum: f64,
    /// `int_0^t ||F||^2`.
    pub forcing_cum: f64,
    pub min_eig: f64,
    pub u_h2: f64,
    pub sigma_h2: f64,
    pub sigma_l2: f64,
    /// `E2 + E1 t`.
    pub bound_e1t_e2: f64,
    /// `R1(t)`.
    pub bound_r1: f64,
    /// `||grad u||^2` at `t`.
    pub dissipation_rate: f64,
    /// `||F(t)||^2`.
    pub forcing_rate: f64,
    /// Largest nodal `|sigma_ij|`.
    pub sigma_max: f64,
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.kinetic,
            self.trace_int,
            self.diss_cum,
            self.trace_cum,
            self.forcing_cum,
            self.min_eig,
            self.u_h2,
            self.sigma_h2,
            self.sigma_l2,
            self.bound_e1t_e2,
            self.bound_r1
        )
    }

    /// `||u||^2 + alpha diss_cum + beta trace_int + beta gamma trace_cum`.
    pub fn energy_lhs(&self, p: &PhysParams) -> f64 {
        2.0 * self.kinetic
            + p.alpha() * self.diss_cum
            + p.beta() * self.trace_int
            + p.beta() * p.gamma() * self.trace_cum
    }

    /// PSD tolerance `1e-8 (1 + max|sigma|)`.
    pub fn tol_psd(&self) -> f64 {
        1e-8 * (1.0 + self.sigma_max)
    }
}

/// Constants of the energy and a-priori bounds for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    pub params: PhysParams,
    /// `3 beta delta + beta^2 / (4 pi^2 alpha) sup ||F||^2`.
    pub e1: f64,
    /// `||u0||^2 + beta int tr sigma0`.
    pub e2: f64,
    /// Mollifier derivative bound.
    pub k: f64,
    pub sigma0_l2: f64,
}

impl BoundConstants {
    pub fn new<T: Real>(pr: &Problem<T>, init: &SimState<T>) -> Self {
        let p = pr.params;
        let f2 = pr.forcing.spec().sup_force_l2_sq();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let e1 = 3.0 * p.beta() * p.delta() + p.beta() * p.beta() / (4.0 * pi2 * p.alpha()) * f2;
        let e2 = init.u.l2_norm_squared().to_f64_lossy() + p.beta() * trace_integral(&init.sigma);
        Self { params: p, e1, e2, k: pr.mollifier.constant(), sigma0_l2: init.sigma.l2_norm().to_f64_lossy() }
    }

    pub fn energy_bound(&self, t: f64) -> f64 {
        self.e2 + self.e1 * t
    }

    pub fn r1(&self, t: f64) -> f64 {
        bound_r1(&self.params, self.k, self.e1, self.e2, t, self.sigma0_l2)
    }
}

/// `int tr sigma` over the unit torus.
pub fn trace_integral<T: Real>(sigma: &Field<T>) -> f64 {
    let m = sigma.mean();
    (m[0] + m[4] + m[8]).to_f64_lossy()
}

/// `||grad u||^2`.
pub fn gradient_norm_sq<T: Real>(u: &Field<T>) -> f64 {
    let torus = u.torus();
    let mut acc = T::zero();
    for c in u.spectral() {
        for (s, v) in c.iter().enumerate() {
            let k = torus.derivative_vector(s);
            acc = acc + torus.parseval_weight(s) * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * v.norm_sqr();
        }
    }
    acc.to_f64_lossy()
}

/// Smallest eigenvalue of a symmetric 3x3 matrix (trigonometric closed form).
pub fn min_eig_sym3(a: [[f64; 3]; 3]) -> f64 {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if p1 == 0.0 {
        return a[0][0].min(a[1][1]).min(a[2][2]);
    }
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}

/// Grid minimum of the smallest eigenvalue of `sigma`.
pub fn min_eig_sigma<T: Real>(sigma: &Field<T>) -> Result<f64> {
    sigma.expect_rank(Rank::Tensor)?;
    let scale = sigma.max_abs().to_f64_lossy();
    let defect = sigma.symmetry_defect()?.to_f64_lossy();
    if defect > 1e-8 * (1.0 + scale) {
        return Err(Error::Asymmetric { defect });
    }
    let p = sigma.physical();
    let mut worst = f64::INFINITY;
    for x in 0..p[0].len() {
        let e = |i: usize, j: usize| 0.5 * (p[3 * i + j][x] + p[3 * j + i][x]).to_f64_lossy();
        let m = [[e(0, 0), e(0, 1), e(0, 2)], [e(0, 1), e(1, 1), e(1, 2)], [e(0, 2), e(1, 2), e(2, 2)]];
        worst = worst.min(min_eig_sym3(m));
    }
    Ok(worst)
}

/// `R1(t) = exp(2 gamma t + 2 delta t + 4 K E2 t + 2 K E1 t^2) (||sigma0||^2 + 2 delta t)`.
pub fn bound_r1(p: &PhysParams, k: f64, e1: f64, e2: f64, t: f64, sigma0_l2: f64) -> f64 {
    let g = p.gamma();
    let d = p.delta();
    let expo = 2.0 * g * t + 2.0 * d * t + 4.0 * k * e2 * t + 2.0 * k * e1 * t * t;
    expo.exp() * (sigma0_l2 * sigma0_l2 + 2.0 * d * t)
}

/// Computes the ledger row for `s`, advancing the cumulative integrals from
/// `prev` by the trapezoidal rule.
pub fn energy_ledger<T: Real>(
    s: &SimState<T>,
    pr: &Problem<T>,
    bounds: &BoundConstants,
    prev: Option<&DiagnosticsRecord>,
) -> Result<DiagnosticsRecord> {
    let mut r = DiagnosticsRecord {
        t: s.t,
        kinetic: 0.5 * s.u.l2_norm_squared().to_f64_lossy(),
        trace_int: trace_integral(&s.sigma),
        min_eig: min_eig_sigma(&s.sigma)?,
        u_h2: sobolev_norm(&s.u, SobolevIndex(2)).to_f64_lossy(),
        sigma_h2: sobolev_norm(&s.sigma, SobolevIndex(2)).to_f64_lossy(),
        sigma_l2: s.sigma.l2_norm().to_f64_lossy(),
        bound_e1t_e2: bounds.energy_bound(s.t),
        bound_r1: bounds.r1(s.t),
        dissipation_rate: gradient_norm_sq(&s.u),
        forcing_rate: pr.forcing.spec().force_l2_sq(s.t),
        sigma_max: s.sigma.max_abs().to_f64_lossy(),
        ..Default::default()
    };
    if let Some(q) = prev {
        let h = r.t - q.t;
        r.diss_cum = q.diss_cum + 0.5 * h * (q.dissipation_rate + r.dissipation_rate);
        r.trace_cum = q.trace_cum + 0.5 * h * (q.trace_int + r.trace_int);
        r.forcing_cum = q.forcing_cum + 0.5 * h * (q.forcing_rate + r.forcing_rate);
    }
    Ok(r)
}

/// Collects records from a run.
#[derive(Clone, Debug)]
pub struct Recorder<'a, T: Real> {
    problem: &'a Problem<T>,
    pub bounds: BoundConstants,
    pub records: Vec<DiagnosticsRecord>,
}

impl<'a, T: Real> Recorder<'a, T> {
    pub fn new(problem: &'a Problem<T>, init: &SimState<T>) -> Self {
        Self { problem, bounds: BoundConstants::new(problem, init), records: Vec::new() }
    }

    pub fn record(&mut self, s: &SimState<T>) -> Result<()> {
        let r = energy_ledger(s, self.problem, &self.bounds, self.records.last())?;
        self.records.push(r);
        Ok(())
    }
}

/// Outcome of [`check_energy_bound`].
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub pass: bool,
    /// `E2 + E1 t - lhs` per record.
    pub margins: Vec<f64>,
    pub worst_margin: f64,
    pub worst_t: f64,
}

/// Checks `||u||^2 + alpha diss + beta tr + beta gamma tr_cum <= E2 + E1 t` at
/// every record, allowing [`ENERGY_ROUNDOFF`] relative slack.
pub fn check_energy_bound(series: &[DiagnosticsRecord], bounds: &BoundConstants) -> EnergyReport {
    let mut rep = EnergyReport { pass: true, margins: Vec::new(), worst_margin: f64::INFINITY, worst_t: 0.0 };
    for r in series {
        let rhs = bounds.energy_bound(r.t);
        let margin = rhs - r.energy_lhs(&bounds.params);
        let slack = ENERGY_ROUNDOFF * rhs.abs().max(1.0);
        if !(margin >= -slack) {
            rep.pass = false;
        }
        if margin < rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_t = r.t;
        }
        rep.margins.push(margin);
    }
    rep
}

/// Every record has `min_eig >= -tol_psd`.
pub fn check_positivity(series: &[DiagnosticsRecord]) -> bool {
    series.iter().all(|r| r.min_eig >= -r.tol_psd())
}

/// Every record has `||sigma||^2 <= R1(t)`.
pub fn check_r1_bound(series: &[DiagnosticsRecord]) -> bool {
    series.iter().all(|r| r.sigma_l2 * r.sigma_l2 <= r.bound_r1)
}

/// `(||u_a - u_b||, ||sigma_a - sigma_b||)`.
pub fn l2_distance<T: Real>(a: &SimState<T>, b: &SimState<T>) -> Result<(f64, f64)> {
    if (a.t - b.t).abs() > 1e-9 * a.t.abs().max(1.0) {
        return Err(Error::TimeMismatch { left: a.t, right: b.t });
    }
    let du = a.u.sub(&b.u)?.l2_norm().to_f64_lossy();
    let ds = a.sigma.sub(&b.sigma)?.l2_norm().to_f64_lossy();
    Ok((du, ds))
}
