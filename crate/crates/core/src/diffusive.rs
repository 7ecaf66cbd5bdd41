//! Time integration of the coupled vorticity / conformation system with
//! tensor diffusion (`eps > 0`).

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::mollifier::MollifierSpec;
use crate::scalar::Real;
use crate::spectral::{project_mean_zero, project_solenoidal, Field, Rank, Torus};
use crate::vorticity::{advect, curl, curl_div_tensor, omega_nonlinear, velocity_from_vorticity};

/// Dimensionless physical parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    /// Solvent viscosity fraction, in `(0, 1]`.
    pub nu: f64,
    pub re: f64,
    pub wi: f64,
    /// Conformation diffusion.
    pub eps: f64,
}

impl PhysParams {
    pub fn new(nu: f64, re: f64, wi: f64, eps: f64) -> Result<Self> {
        let p = Self { nu, re, wi, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(&format!("nu = {} outside (0, 1]", self.nu));
        }
        if !(self.re > 0.0 && self.re.is_finite()) {
            return bad(&format!("Re = {} must be positive", self.re));
        }
        if !(self.wi > 0.0 && self.wi.is_finite()) {
            return bad(&format!("Wi = {} must be positive", self.wi));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(&format!("eps = {} must be nonnegative", self.eps));
        }
        Ok(())
    }

    /// Solvent viscosity `nu / Re`.
    pub fn alpha(&self) -> f64 {
        self.nu / self.re
    }

    /// Polymer coupling `1 / Re`.
    pub fn beta(&self) -> f64 {
        1.0 / self.re
    }

    /// Relaxation rate `1 / Wi`.
    pub fn gamma(&self) -> f64 {
        1.0 / self.wi
    }

    /// Source strength `(1 - nu) / Wi^2`.
    pub fn delta(&self) -> f64 {
        (1.0 - self.nu) / (self.wi * self.wi)
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcingKind {
    None,
    /// `F = A (sin 2 pi m x2, sin 2 pi m x3, sin 2 pi m x1) cos 2 pi f t`.
    Sinusoidal,
}

/// Analytic body force family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    pub amplitude: f64,
    pub frequency: f64,
    pub wavenumber: u32,
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl ForcingSpec {
    pub fn none() -> Self {
        Self { kind: ForcingKind::None, amplitude: 0.0, frequency: 0.0, wavenumber: 1 }
    }

    pub fn sinusoidal(amplitude: f64, frequency: f64, wavenumber: u32) -> Self {
        Self { kind: ForcingKind::Sinusoidal, amplitude, frequency, wavenumber }
    }

    pub fn is_active(&self) -> bool {
        self.kind != ForcingKind::None && self.amplitude != 0.0
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        (std::f64::consts::TAU * self.frequency * t).cos()
    }

    /// `||F(t)||^2_{L^2}`.
    pub fn force_l2_sq(&self, t: f64) -> f64 {
        if !self.is_active() || self.wavenumber == 0 {
            return 0.0;
        }
        let c = self.time_factor(t);
        1.5 * self.amplitude * self.amplitude * c * c
    }

    /// `sup_t ||F(t)||^2_{L^2}`.
    pub fn sup_force_l2_sq(&self) -> f64 {
        if !self.is_active() || self.wavenumber == 0 {
            0.0
        } else {
            1.5 * self.amplitude * self.amplitude
        }
    }

    /// Sum of the sup norms of the components of `F` and of `g = beta curl F`.
    pub fn k_g(&self, beta: f64) -> f64 {
        if !self.is_active() {
            return 0.0;
        }
        let a = self.amplitude.abs();
        3.0 * a + 3.0 * beta * std::f64::consts::TAU * self.wavenumber as f64 * a
    }

    /// Spatial profile of `F` at unit time factor.
    fn pattern<T: Real>(&self, torus: &Arc<Torus<T>>) -> Field<T> {
        let m = T::lit(std::f64::consts::TAU * self.wavenumber as f64);
        let a = T::lit(self.amplitude);
        Field::vector_fn(torus, |x| [a * (m * x[1]).sin(), a * (m * x[2]).sin(), a * (m * x[0]).sin()])
    }

    /// Rejects families that are unresolved on `torus` or have a nonzero mean.
    pub fn validate<T: Real>(&self, torus: &Arc<Torus<T>>) -> Result<()> {
        if !self.is_active() {
            return Ok(());
        }
        if !(self.amplitude.is_finite() && self.frequency.is_finite()) {
            return Err(Error::InvalidParameter("forcing parameters must be finite".into()));
        }
        let grid = torus.grid();
        let m = self.wavenumber as usize;
        if (0..3).any(|a| m > grid.dealias_cutoff(a)) {
            return Err(Error::InvalidParameter(format!(
                "forcing wavenumber {m} is not resolved on grid {:?}",
                grid.dims()
            )));
        }
        let pattern = self.pattern(torus);
        let mean = pattern.mean().iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if mean > T::roundoff() * (T::one() + pattern.l2_norm()) {
            return Err(Error::InvalidParameter("forcing must have zero mean".into()));
        }
        Ok(())
    }
}

/// A [`ForcingSpec`] with its spatial profiles precomputed on one torus.
#[derive(Clone, Debug)]
pub struct Forcing<T: Real> {
    spec: ForcingSpec,
    force: Option<Field<T>>,
    curl: Option<Field<T>>,
}

impl<T: Real> Forcing<T> {
    pub fn new(spec: ForcingSpec, torus: &Arc<Torus<T>>, beta: f64) -> Result<Self> {
        spec.validate(torus)?;
        if !spec.is_active() {
            return Ok(Self { spec, force: None, curl: None });
        }
        let f = spec.pattern(torus);
        let g = curl(&f)?.scale(T::lit(beta));
        Ok(Self { spec, force: Some(f), curl: Some(g) })
    }

    pub fn spec(&self) -> &ForcingSpec {
        &self.spec
    }

    /// `F(t)`, or `None` when unforced.
    pub fn force(&self, t: f64) -> Option<Field<T>> {
        self.force.as_ref().map(|f| f.scale(T::lit(self.spec.time_factor(t))))
    }

    /// `g(t) = beta curl F(t)`, or `None` when unforced.
    pub fn g(&self, t: f64) -> Option<Field<T>> {
        self.curl.as_ref().map(|f| f.scale(T::lit(self.spec.time_factor(t))))
    }
}

/// Everything a run needs besides its state.
#[derive(Clone, Debug)]
pub struct Problem<T: Real> {
    pub params: PhysParams,
    pub forcing: Forcing<T>,
    pub mollifier: MollifierSpec<T>,
}

impl<T: Real> Problem<T> {
    pub fn new(params: PhysParams, forcing: ForcingSpec, mollifier: MollifierSpec<T>) -> Result<Self> {
        params.validate()?;
        let forcing = Forcing::new(forcing, mollifier.torus(), params.beta())?;
        Ok(Self { params, forcing, mollifier })
    }

    pub fn torus(&self) -> &Arc<Torus<T>> {
        self.mollifier.torus()
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { params: self.params.with_eps(eps), ..self.clone() }
    }
}

/// Time, vorticity, conformation tensor and recovered velocity.
#[derive(Clone, Debug)]
pub struct SimState<T: Real> {
    pub t: f64,
    pub omega: Field<T>,
    pub sigma: Field<T>,
    pub u: Field<T>,
}

impl<T: Real> SimState<T> {
    /// State from a velocity; `u` is replaced by the solenoidal, mean-zero
    /// velocity recovered from its curl.
    pub fn from_velocity(t: f64, u: &Field<T>, sigma: Field<T>) -> Result<Self> {
        u.check_grid(&sigma)?;
        sigma.expect_rank(Rank::Tensor)?;
        let omega = curl(u)?;
        let u = velocity_from_vorticity(&omega)?;
        Ok(Self { t, omega, sigma, u })
    }

    pub fn from_vorticity(t: f64, omega: Field<T>, sigma: Field<T>) -> Result<Self> {
        omega.check_grid(&sigma)?;
        sigma.expect_rank(Rank::Tensor)?;
        let u = velocity_from_vorticity(&omega)?;
        Ok(Self { t, omega, sigma, u })
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite() && self.sigma.is_finite()
    }
}

/// Nonlinear vorticity tendency
/// `beta curl div J sigma - (Ju . grad) omega - Omega(Ju, u) + g(t)`.
pub fn rhs_vorticity<T: Real>(s: &SimState<T>, pr: &Problem<T>) -> Result<Field<T>> {
    let ju = pr.mollifier.apply(&s.u)?;
    rhs_vorticity_with(s, &ju, &s.sigma, pr)
}

fn rhs_vorticity_with<T: Real>(s: &SimState<T>, ju: &Field<T>, sigma: &Field<T>, pr: &Problem<T>) -> Result<Field<T>> {
    let beta = T::lit(pr.params.beta());
    let coupling = curl_div_tensor(&pr.mollifier.apply(sigma)?)?;
    let mut out = coupling.scale(beta);
    out = out.sub(&advect(ju, &s.omega)?)?;
    out = out.sub(&omega_nonlinear(ju, &s.u)?)?;
    if let Some(g) = pr.forcing.g(s.t) {
        out = out.add(&g)?;
    }
    Ok(project_mean_zero(&out))
}

/// Indices of the upper triangle of a 3x3 tensor.
const UPPER: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// `-(v . grad) sigma + (grad v) sigma + sigma (grad v)^T` for symmetric
/// `sigma`, dealiased and exactly symmetric.
pub fn sigma_transport<T: Real>(v: &Field<T>, sigma: &Field<T>) -> Result<Field<T>> {
    v.expect_rank(Rank::Vector)?;
    sigma.expect_rank(Rank::Tensor)?;
    v.check_grid(sigma)?;
    let torus = v.torus().clone();
    let grid = torus.grid();
    let n = grid.len();
    let s_len = grid.spectral_len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut buf = vec![zero; s_len];
    let mut d = |spec: &[Complex<T>], a: usize| -> Vec<T> {
        for (s, slot) in buf.iter_mut().enumerate() {
            let k = torus.derivative_symbol(a, grid.mode_coords(s)[a]);
            let c = spec[s];
            *slot = Complex::new(-c.im * k, c.re * k);
        }
        torus.inverse(&buf)
    };
    let vs = v.spectral();
    let gv: Vec<Vec<T>> = (0..9).map(|ik| d(&vs[ik / 3], ik % 3)).collect(); // d_k v^i at [3i+k]
    let ss = sigma.spectral();
    let vp = v.physical();
    let sp = sigma.physical();
    let mut out = vec![vec![zero; s_len]; 9];
    let mut nodal = vec![T::zero(); n];
    for &(i, j) in &UPPER {
        let c = 3 * i + j;
        let g0 = d(&ss[c], 0);
        let g1 = d(&ss[c], 1);
        let g2 = d(&ss[c], 2);
        for x in 0..n {
            let mut acc = -(vp[0][x] * g0[x] + vp[1][x] * g1[x] + vp[2][x] * g2[x]);
            for k in 0..3 {
                acc = acc + gv[3 * i + k][x] * sp[3 * k + j][x] + sp[3 * i + k][x] * gv[3 * j + k][x];
            }
            nodal[x] = acc;
        }
        let mut spec = torus.forward(&nodal);
        torus.dealias(&mut spec);
        if i != j {
            out[3 * j + i] = spec.clone();
        }
        out[c] = spec;
    }
    Field::from_spectral(&torus, Rank::Tensor, out)
}

/// Full conformation tendency without diffusion:
/// `delta I - (Ju . grad) sigma + (grad Ju) sigma + sigma (grad Ju)^T - gamma sigma`.
pub fn rhs_sigma<T: Real>(s: &SimState<T>, pr: &Problem<T>) -> Result<Field<T>> {
    let ju = pr.mollifier.apply(&s.u)?;
    let transport = sigma_transport(&ju, &s.sigma)?;
    let d = T::lit(pr.params.delta());
    let iso = Field::constant(s.sigma.torus(), Rank::Tensor, &identity(d))?;
    transport.add(&iso)?.lincomb(T::one(), &s.sigma, -T::lit(pr.params.gamma()))
}

pub(crate) fn identity<T: Real>(d: T) -> [T; 9] {
    let z = T::zero();
    [d, z, z, z, d, z, z, z, d]
}

/// Largest `|Ju|` over the nodes.
pub fn max_speed<T: Real>(ju: &Field<T>) -> f64 {
    let p = ju.physical();
    let mut m = T::zero();
    for x in 0..p[0].len() {
        m = m.max((p[0][x] * p[0][x] + p[1][x] * p[1][x] + p[2][x] * p[2][x]).sqrt());
    }
    m.to_f64_lossy()
}

/// Rejects `dt` when `dt max|Ju| n > 1`.
pub fn check_cfl<T: Real>(ju: &Field<T>, dt: f64) -> Result<()> {
    let speed = max_speed(ju);
    let n = ju.grid().dims().into_iter().max().unwrap_or(1) as f64;
    if dt * speed * n > 1.0 {
        return Err(Error::Cfl { dt, max_speed: speed, required_dt: 1.0 / (3.0 * speed * n) });
    }
    Ok(())
}

/// Per-mode integrating factor `exp(-rate(s) dt)`.
fn decay_table<T: Real>(torus: &Torus<T>, diff: f64, react: f64, dt: f64) -> Vec<T> {
    (0..torus.grid().spectral_len())
        .map(|s| {
            let k2 = torus.laplacian_symbol(s).to_f64_lossy();
            T::lit((-(diff * k2 + react) * dt).exp())
        })
        .collect()
}

/// Exact integral of the constant source `delta I` against `exp(-gamma t)`.
fn source_weight(gamma: f64, delta: f64, dt: f64) -> f64 {
    if gamma == 0.0 {
        delta * dt
    } else {
        delta * (1.0 - (-gamma * dt).exp()) / gamma
    }
}

/// `E (y + a N0) + b N1` per mode, used for both RK2 stages.
fn combine<T: Real>(
    y: &Field<T>,
    n0: &Field<T>,
    a_in: T,
    a_out: T,
    n1: Option<&Field<T>>,
    b: T,
    e: &[T],
) -> Result<Field<T>> {
    y.check_grid(n0)?;
    let mut spec: Vec<Vec<Complex<T>>> = Vec::with_capacity(y.spectral().len());
    for c in 0..y.spectral().len() {
        let (yc, nc) = (&y.spectral()[c], &n0.spectral()[c]);
        let mut row: Vec<Complex<T>> = (0..yc.len()).map(|s| yc[s] * e[s] + nc[s] * (e[s] * a_in) * a_out).collect();
        if let Some(n1) = n1 {
            for (r, v) in row.iter_mut().zip(&n1.spectral()[c]) {
                *r = *r + *v * b;
            }
        }
        spec.push(row);
    }
    Field::from_spectral(y.torus(), y.rank(), spec)
}

fn add_identity<T: Real>(f: Field<T>, w: f64) -> Result<Field<T>> {
    if w == 0.0 {
        return Ok(f);
    }
    let iso = Field::constant(f.torus(), Rank::Tensor, &identity(T::lit(w)))?;
    f.add(&iso)
}

/// Restores the structural invariants after a step.
pub(crate) fn finish_state<T: Real>(t: f64, omega: Field<T>, sigma: Field<T>) -> Result<SimState<T>> {
    let omega = project_mean_zero(&project_solenoidal(&omega)?).dealiased();
    let sigma = sigma.symmetrized()?.dealiased();
    let u = velocity_from_vorticity(&omega)?;
    Ok(SimState { t, omega, sigma, u })
}

/// One integrating-factor RK2 step of the full system.
///
/// Diffusion, relaxation and the isotropic source are integrated exactly per
/// mode; advection, stretching, coupling and forcing are explicit (Heun).
pub fn step_imex<T: Real>(s: &SimState<T>, pr: &Problem<T>, dt: f64) -> Result<SimState<T>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let p = &pr.params;
    let torus = s.omega.torus().clone();
    let e_w = decay_table(&torus, p.alpha(), 0.0, dt);
    let e_s = decay_table(&torus, p.eps, p.gamma(), dt);
    let src = source_weight(p.gamma(), p.delta(), dt);
    let h = T::lit(dt);
    let half = T::lit(0.5);

    let ju0 = pr.mollifier.apply(&s.u)?;
    check_cfl(&ju0, dt)?;
    let nw0 = rhs_vorticity_with(s, &ju0, &s.sigma, pr)?;
    let ns0 = sigma_transport(&ju0, &s.sigma)?;

    let w1 = combine(&s.omega, &nw0, T::one(), h, None, T::zero(), &e_w)?;
    let s1 = add_identity(combine(&s.sigma, &ns0, T::one(), h, None, T::zero(), &e_s)?, src)?;
    let st1 = SimState::from_vorticity(s.t + dt, project_mean_zero(&w1), s1)?;

    let ju1 = pr.mollifier.apply(&st1.u)?;
    let nw1 = rhs_vorticity_with(&st1, &ju1, &st1.sigma, pr)?;
    let ns1 = sigma_transport(&ju1, &st1.sigma)?;

    let w2 = combine(&s.omega, &nw0, T::one(), h * half, Some(&nw1), h * half, &e_w)?;
    let s2 = add_identity(combine(&s.sigma, &ns0, T::one(), h * half, Some(&ns1), h * half, &e_s)?, src)?;
    finish_state(s.t + dt, w2, s2)
}

/// One integrating-factor RK2 step of the vorticity alone, with `sigma`
/// frozen in the coupling term.
pub fn step_vorticity<T: Real>(
    s: &SimState<T>,
    sigma: &Field<T>,
    pr: &Problem<T>,
    dt: f64,
) -> Result<(Field<T>, Field<T>)> {
    let torus = s.omega.torus().clone();
    let e_w = decay_table(&torus, pr.params.alpha(), 0.0, dt);
    let h = T::lit(dt);
    let half = T::lit(0.5);
    let ju0 = pr.mollifier.apply(&s.u)?;
    check_cfl(&ju0, dt)?;
    let n0 = rhs_vorticity_with(s, &ju0, sigma, pr)?;
    let w1 = project_mean_zero(&combine(&s.omega, &n0, T::one(), h, None, T::zero(), &e_w)?);
    let st1 = SimState::from_vorticity(s.t + dt, w1, sigma.clone())?;
    let ju1 = pr.mollifier.apply(&st1.u)?;
    let n1 = rhs_vorticity_with(&st1, &ju1, sigma, pr)?;
    let w2 = combine(&s.omega, &n0, T::one(), h * half, Some(&n1), h * half, &e_w)?;
    let omega = project_mean_zero(&project_solenoidal(&w2)?).dealiased();
    let u = velocity_from_vorticity(&omega)?;
    Ok((omega, u))
}

/// Number of steps and adjusted step so that `steps * dt == horizon`.
pub fn step_plan(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be nonnegative")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    if horizon == 0.0 {
        return Ok((0, dt));
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

/// Receives states at `t0`, every `stride` steps and at the final time.
pub type Sink<'a, T> = dyn FnMut(&SimState<T>) -> Result<()> + 'a;

/// Advances `state` to `state.t + horizon` with [`step_imex`].
///
/// On error `state` holds the last completed step.
pub fn run_diffusive<T: Real>(
    state: &mut SimState<T>,
    pr: &Problem<T>,
    horizon: f64,
    dt: f64,
    stride: usize,
    sink: &mut Sink<'_, T>,
) -> Result<()> {
    if !(pr.params.eps > 0.0) {
        return Err(Error::InvalidParameter("the diffusive branch needs eps > 0".into()));
    }
    let (steps, dt) = step_plan(horizon, dt)?;
    let stride = stride.max(1);
    let t0 = state.t;
    sink(state)?;
    for k in 1..=steps {
        let mut next = step_imex(state, pr, dt)?;
        next.t = t0 + k as f64 * dt;
        if !next.is_finite() {
            return Err(Error::NonFinite { t: next.t });
        }
        *state = next;
        if k % stride == 0 || k == steps {
            sink(state)?;
        }
    }
    Ok(())
}
