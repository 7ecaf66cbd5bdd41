//! Conformation update without tensor diffusion (`eps = 0`) by backward
//! characteristics of the mollified velocity.
//!
//! Along a trajectory ending at node `x` at time `t`, with backward time
//! `tau`, departure point `X(tau)` and relative deformation
//! `H(tau) = dphi(t; t - tau)`:
//!
//! ```text
//! X' = -v(X, t - tau),   H' = H A(X, t - tau),   A_ik = d_k v^i
//! sigma(x, t) = e^{-gamma D} H(D) sigma_n(X(D)) H(D)^T + delta int_0^D e^{-gamma tau} H H^T dtau
//! ```

use std::collections::HashMap;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use num_complex::Complex;

use crate::diffusive::{finish_state, step_plan, step_vorticity, PhysParams, Problem, SimState, Sink};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{Field, Grid, Rank};

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

/// `a b^T`.
fn mat_mul_t<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[j][0] + a[i][1] * b[j][1] + a[i][2] * b[j][2];
        }
    }
    c
}

fn mat_axpy<T: Real>(y: &Mat3<T>, a: T, x: &Mat3<T>) -> Mat3<T> {
    let mut c = *y;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = c[i][j] + a * x[i][j];
        }
    }
    c
}

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn identity3<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

/// Velocity and velocity gradient sampled along trajectories.
///
/// A trajectory is identified by its start index and start point `x0`; the
/// current position is `x0 + disp` (unwrapped). Grid-based fields use the
/// start index as the expansion node, analytic fields just evaluate at
/// `x0 + disp`.
pub trait VelocityField<T: Real>: Sync {
    /// Returns `(v, A)` with `A[i][k] = d_k v^i`.
    fn sample(&self, start: usize, x0: Vec3<T>, disp: Vec3<T>, t: f64) -> (Vec3<T>, Mat3<T>);
}

/// Exact trigonometric evaluation of every component of `f` at `points`.
///
/// Direct summation over the stored spectrum, `O(N M)`. Nyquist modes are
/// taken as cosines so nodal values are reproduced.
pub fn offgrid_eval<T: Real>(f: &Field<T>, points: &[Vec3<T>]) -> Vec<Vec<T>> {
    let grid = f.grid();
    let [n1, n2, n3] = grid.dims();
    let h3 = n3 / 2 + 1;
    let tau = T::TAU();
    let phases = |axis: usize, len: usize, x: T| -> Vec<Complex<T>> {
        let n = grid.dims()[axis];
        (0..len)
            .map(|i| {
                let k = grid.wavenumber(axis, i);
                let arg = tau * T::lit(k as f64) * x;
                if 2 * k.unsigned_abs() as usize == n {
                    Complex::new(arg.cos(), T::zero())
                } else {
                    Complex::new(arg.cos(), arg.sin())
                }
            })
            .collect()
    };
    let mut out = vec![Vec::with_capacity(points.len()); f.spectral().len()];
    for p in points {
        let e1 = phases(0, n1, p[0]);
        let e2 = phases(1, n2, p[1]);
        let e3 = phases(2, h3, p[2]);
        for (c, comp) in f.spectral().iter().enumerate() {
            let mut acc = T::zero();
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let e12 = e1[i1] * e2[i2];
                    let row = (i1 * n2 + i2) * h3;
                    for j3 in 0..h3 {
                        let w = if j3 == 0 || 2 * j3 == n3 { T::one() } else { T::lit(2.0) };
                        acc = acc + w * (comp[row + j3] * e12 * e3[j3]).re;
                    }
                }
            }
            out[c].push(acc);
        }
    }
    out
}

/// Multi-indices with `|lambda| <= order`, lowest order first.
fn taylor_indices(order: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for total in 0..=order {
        for a in (0..=total).rev() {
            for b in (0..=(total - a)).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

/// Spectral Taylor expansion of a field about every grid node.
///
/// Stores `D^lambda f(node) / lambda!` for `|lambda| <= order` as one nodal
/// array per (component, multi-index).
/// Evaluation near a node is a polynomial in the displacement; the error
/// behaves like `(2 pi |k| |d|)^(order+1) / (order+1)!` per mode `k`.
#[derive(Clone, Debug)]
pub struct NodeTaylor<T: Real> {
    grid: Grid,
    comps: usize,
    order: u32,
    indices: Vec<[u32; 3]>,
    /// `lambda` as scalars, the factors produced by differentiation.
    weights: Vec<[T; 3]>,
    coeffs: Vec<Vec<T>>,
}

impl<T: Real> NodeTaylor<T> {
    /// Expansion of the given components of `f` (all when `comps` is `None`).
    pub fn new(f: &Field<T>, order: u32, comps: Option<&[usize]>) -> Self {
        let torus = f.torus().clone();
        let grid = torus.grid();
        let all: Vec<usize> = (0..f.spectral().len()).collect();
        let comps = comps.unwrap_or(&all);
        assert!(order < 16, "Taylor order must stay below 16");
        let indices = taylor_indices(order);
        let nl = indices.len();
        let nc = comps.len();
        let s_len = grid.spectral_len();
        let kvec: Vec<[T; 3]> = (0..s_len).map(|s| torus.derivative_vector(s)).collect();
        let fact = |n: u32| (1..=n).fold(1.0f64, |a, b| a * b as f64);
        let scales: Vec<T> = indices.iter().map(|l| T::lit(1.0 / (fact(l[0]) * fact(l[1]) * fact(l[2])))).collect();
        // D^lambda f = (i k_a) D^(lambda - e_a) f with `a` the first nonzero
        // axis; parents come earlier in `indices`.
        let slot_of: HashMap<[u32; 3], usize> = indices.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let parents: Vec<Option<(usize, usize)>> = indices
            .iter()
            .map(|l| {
                let a = (0..3).find(|&a| l[a] > 0)?;
                let mut p = *l;
                p[a] -= 1;
                Some((slot_of[&p], a))
            })
            .collect();
        let mut coeffs: Vec<Vec<T>> = Vec::with_capacity(nc * nl);
        let mut specs: Vec<Vec<Complex<T>>> = Vec::with_capacity(nl);
        for &c in comps {
            specs.clear();
            for (li, parent) in parents.iter().enumerate() {
                let spec = match *parent {
                    None => f.spectral()[c].clone(),
                    Some((p, a)) => {
                        specs[p].iter().zip(&kvec).map(|(z, k)| Complex::new(-k[a] * z.im, k[a] * z.re)).collect()
                    }
                };
                let mut vals = torus.inverse(&spec);
                for v in vals.iter_mut() {
                    *v = *v * scales[li];
                }
                coeffs.push(vals);
                specs.push(spec);
            }
        }
        let weights = indices.iter().map(|l| l.map(|v| T::lit(f64::from(v)))).collect();
        Self { grid, comps: nc, order, indices, weights, coeffs }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Smallest order in `1..=max_order` whose truncation error within
    /// `radius` of a node stays below `tol` relative to the field, using the
    /// bound `sum_k |f_k| (2 pi |k| r)^(M+1) / (M+1)!` (with one more factor
    /// `2 pi |k|` and order `M` when `gradient` is set). Returns `max_order`
    /// when no order qualifies.
    pub fn required_order(
        f: &Field<T>,
        comps: Option<&[usize]>,
        radius: f64,
        tol: f64,
        max_order: u32,
        gradient: bool,
    ) -> u32 {
        let torus = f.torus();
        let all: Vec<usize> = (0..f.spectral().len()).collect();
        let comps = comps.unwrap_or(&all);
        let modes: Vec<(f64, f64)> = (0..torus.grid().spectral_len())
            .filter_map(|s| {
                let amp: f64 = comps.iter().map(|&c| f.spectral()[c][s].norm().to_f64_lossy()).sum();
                let k = torus.derivative_vector(s).map(|v| v.to_f64_lossy());
                let kap = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
                let w = torus.parseval_weight(s).to_f64_lossy() * amp * if gradient { kap } else { 1.0 };
                (w > 0.0).then_some((w, kap * radius))
            })
            .collect();
        let scale: f64 = modes.iter().map(|m| m.0).sum();
        if scale == 0.0 || radius == 0.0 {
            return 1.min(max_order);
        }
        let shift = if gradient { 0 } else { 1 };
        for m in 1..=max_order {
            let p = (m + shift) as i32;
            let fact: f64 = (1..=p).map(f64::from).product();
            let err: f64 = modes.iter().map(|&(w, z)| w * z.powi(p)).sum::<f64>() / fact;
            if err <= tol * scale {
                return m;
            }
        }
        max_order
    }

    pub fn components(&self) -> usize {
        self.comps
    }

    fn powers(&self, disp: Vec3<T>) -> [[T; 16]; 3] {
        let mut pw = [[T::one(); 16]; 3];
        for a in 0..3 {
            for j in 1..=self.order as usize {
                pw[a][j] = pw[a][j - 1] * disp[a];
            }
        }
        pw
    }

    /// Values at `node + disp`, written to `out` (length = components).
    pub fn eval_near(&self, node: usize, disp: Vec3<T>, out: &mut [T]) {
        let pw = self.powers(disp);
        let nl = self.indices.len();
        let out = &mut out[..self.comps];
        out.fill(T::zero());
        for (li, lam) in self.indices.iter().enumerate() {
            let m = pw[0][lam[0] as usize] * pw[1][lam[1] as usize] * pw[2][lam[2] as usize];
            for (c, o) in out.iter_mut().enumerate() {
                *o = *o + self.coeffs[c * nl + li][node] * m;
            }
        }
    }

    /// Values and first derivatives at `node + disp`; `grad[c][a] = d_a f_c`.
    pub fn eval_with_gradient(&self, node: usize, disp: Vec3<T>, val: &mut [T], grad: &mut [[T; 3]]) {
        let pw = self.powers(disp);
        let nl = self.indices.len();
        let val = &mut val[..self.comps];
        let grad = &mut grad[..self.comps];
        val.fill(T::zero());
        grad.fill([T::zero(); 3]);
        for (li, (lam, w)) in self.indices.iter().zip(&self.weights).enumerate() {
            let (l0, l1, l2) = (lam[0] as usize, lam[1] as usize, lam[2] as usize);
            let m = pw[0][l0] * pw[1][l1] * pw[2][l2];
            // pw[a][l - 1] is only read when the weight l is nonzero
            let g = [
                w[0] * pw[0][l0.saturating_sub(1)] * pw[1][l1] * pw[2][l2],
                w[1] * pw[0][l0] * pw[1][l1.saturating_sub(1)] * pw[2][l2],
                w[2] * pw[0][l0] * pw[1][l1] * pw[2][l2.saturating_sub(1)],
            ];
            for c in 0..self.comps {
                let cf = self.coeffs[c * nl + li][node];
                val[c] = val[c] + cf * m;
                for a in 0..3 {
                    grad[c][a] = grad[c][a] + cf * g[a];
                }
            }
        }
    }

    /// Values at an arbitrary point, expanded about the nearest node.
    pub fn eval(&self, x: Vec3<T>, out: &mut [T]) {
        let (node, disp) = nearest_node(&self.grid, x);
        self.eval_near(node, disp, out);
    }
}

/// Nearest node to `x` and the displacement from it.
pub fn nearest_node<T: Real>(grid: &Grid, x: Vec3<T>) -> (usize, Vec3<T>) {
    let dims = grid.dims();
    let mut idx = [0usize; 3];
    let mut disp = [T::zero(); 3];
    for a in 0..3 {
        let n = T::lit(dims[a] as f64);
        let r = (x[a] * n).round();
        disp[a] = x[a] - r / n;
        let i = r.to_f64_lossy() as i64;
        idx[a] = i.rem_euclid(dims[a] as i64) as usize;
    }
    (grid.node_index(idx[0], idx[1], idx[2]), disp)
}

/// Mollified velocity over one macro step, sampled by node Taylor expansions.
///
/// With one level the field is stationary; with more levels it is
/// interpolated in time by Lagrange polynomials through the level times.
#[derive(Clone, Debug)]
pub struct VelocitySlab<T: Real> {
    times: Vec<f64>,
    levels: Vec<NodeTaylor<T>>,
}

impl<T: Real> VelocitySlab<T> {
    /// `fields` are already mollified velocities at strictly increasing `times`.
    pub fn new(times: &[f64], fields: &[Field<T>], order: u32) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::InvalidParameter("slab needs one time per field".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("slab times must increase".into()));
        }
        for f in fields {
            f.expect_rank(Rank::Vector)?;
            fields[0].check_grid(f)?;
        }
        let levels = fields.iter().map(|f| NodeTaylor::new(f, order, None)).collect();
        Ok(Self { times: times.to_vec(), levels })
    }

    pub fn stationary(field: &Field<T>, order: u32) -> Result<Self> {
        Self::new(&[0.0], std::slice::from_ref(field), order)
    }

    fn weights(&self, t: f64) -> Vec<f64> {
        let ts = &self.times;
        (0..ts.len())
            .map(|i| (0..ts.len()).filter(|&j| j != i).map(|j| (t - ts[j]) / (ts[i] - ts[j])).product())
            .collect()
    }
}

impl<T: Real> VelocityField<T> for VelocitySlab<T> {
    fn sample(&self, start: usize, _x0: Vec3<T>, disp: Vec3<T>, t: f64) -> (Vec3<T>, Mat3<T>) {
        let mut v = [T::zero(); 3];
        let mut a = [[T::zero(); 3]; 3];
        let mut val = [T::zero(); 3];
        let mut grad = [[T::zero(); 3]; 3];
        let w = self.weights(t);
        for (lvl, &wi) in self.levels.iter().zip(&w) {
            lvl.eval_with_gradient(start, disp, &mut val, &mut grad);
            let wi = T::lit(wi);
            for i in 0..3 {
                v[i] = v[i] + wi * val[i];
                for k in 0..3 {
                    a[i][k] = a[i][k] + wi * grad[i][k];
                }
            }
        }
        (v, a)
    }
}

/// Departure points, relative deformations and relaxation-weighted Gram
/// integrals for one macro step.
#[derive(Clone, Debug)]
pub struct FlowStepState<T: Real> {
    /// Departure points wrapped to `[0, 1)^3`.
    pub departure: Vec<Vec3<T>>,
    /// Unwrapped displacement `X - x0`.
    pub displacement: Vec<Vec3<T>>,
    /// `H = dphi(t; t - span)`, mapping departure to arrival.
    pub deformation: Vec<Mat3<T>>,
    /// `int_0^span e^{-gamma tau} H H^T dtau`.
    pub gram_integral: Vec<Mat3<T>>,
}

impl<T: Real> FlowStepState<T> {
    pub fn determinants(&self) -> Vec<T> {
        self.deformation.iter().map(det3).collect()
    }

    pub fn max_det_defect(&self) -> f64 {
        self.deformation.iter().map(|h| (det3(h) - T::one()).abs().to_f64_lossy()).fold(0.0, f64::max)
    }
}

/// Weights of `int_a^{a+h} e^{-gamma tau} p(tau) dtau` on the values of `p` at
/// `a`, `a + h/2`, `a + h`, exact for quadratic `p` (Simpson's rule when
/// `gamma = 0`).
fn relaxation_weights<T: Real>(a: f64, h: f64, gamma: f64) -> [T; 3] {
    let rule = GaussLegendre::new(NonZeroUsize::new(8).expect("nonzero"));
    let basis = [|s: f64| 2.0 * (s - 0.5) * (s - 1.0), |s: f64| -4.0 * s * (s - 1.0), |s: f64| 2.0 * s * (s - 0.5)];
    basis.map(|l| T::lit(h * rule.integrate(0.0, 1.0, |s| (-gamma * (a + h * s)).exp() * l(s))))
}

/// Integrates the characteristic system backwards over `span` from every start
/// point with classical RK4 (`substeps` steps). The Gram integral uses the
/// same stages with exponentially weighted Simpson weights.
pub fn trace_characteristics<T: Real>(
    field: &dyn VelocityField<T>,
    starts: &[Vec3<T>],
    t_end: f64,
    span: f64,
    substeps: usize,
    gamma: f64,
) -> FlowStepState<T> {
    let substeps = substeps.max(1);
    let h = span / substeps as f64;
    let ht = T::lit(h);
    let sixth = T::lit(1.0 / 6.0);
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let m = starts.len();
    let mut st = FlowStepState {
        departure: Vec::with_capacity(m),
        displacement: Vec::with_capacity(m),
        deformation: Vec::with_capacity(m),
        gram_integral: Vec::with_capacity(m),
    };
    let weights: Vec<[T; 3]> = (0..substeps).map(|k| relaxation_weights(k as f64 * h, h, gamma)).collect();
    for (idx, &x0) in starts.iter().enumerate() {
        let mut d = [T::zero(); 3];
        let mut hm = identity3::<T>();
        let mut q = [[T::zero(); 3]; 3];
        for step in 0..substeps {
            let tau0 = step as f64 * h;
            let at = |tau: f64| t_end - tau;
            let (v1, a1) = field.sample(idx, x0, d, at(tau0));
            let k1 = v1.map(|c| -c);
            let g1 = mat_mul(&hm, &a1);
            let q1 = mat_mul_t(&hm, &hm);

            let d2 = [0, 1, 2].map(|i| d[i] + half * ht * k1[i]);
            let h2 = mat_axpy(&hm, half * ht, &g1);
            let (v2, a2) = field.sample(idx, x0, d2, at(tau0 + 0.5 * h));
            let k2 = v2.map(|c| -c);
            let g2 = mat_mul(&h2, &a2);
            let q2 = mat_mul_t(&h2, &h2);

            let d3 = [0, 1, 2].map(|i| d[i] + half * ht * k2[i]);
            let h3 = mat_axpy(&hm, half * ht, &g2);
            let (v3, a3) = field.sample(idx, x0, d3, at(tau0 + 0.5 * h));
            let k3 = v3.map(|c| -c);
            let g3 = mat_mul(&h3, &a3);
            let q3 = mat_mul_t(&h3, &h3);

            let d4 = [0, 1, 2].map(|i| d[i] + ht * k3[i]);
            let h4 = mat_axpy(&hm, ht, &g3);
            let (v4, a4) = field.sample(idx, x0, d4, at(tau0 + h));
            let k4 = v4.map(|c| -c);
            let g4 = mat_mul(&h4, &a4);
            let q4 = mat_mul_t(&h4, &h4);

            let [w0, wm, w1] = weights[step];
            for i in 0..3 {
                d[i] = d[i] + ht * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
                for j in 0..3 {
                    hm[i][j] = hm[i][j] + ht * sixth * (g1[i][j] + two * g2[i][j] + two * g3[i][j] + g4[i][j]);
                    q[i][j] = q[i][j] + w0 * q1[i][j] + wm * half * (q2[i][j] + q3[i][j]) + w1 * q4[i][j];
                }
            }
        }
        let dep = [0, 1, 2].map(|a| {
            let y = x0[a] + d[a];
            y - y.floor()
        });
        st.departure.push(dep);
        st.displacement.push(d);
        st.deformation.push(hm);
        st.gram_integral.push(q);
    }
    st
}

/// Departure points of backward characteristics over `[t_end - span, t_end]`.
pub fn backward_trajectory<T: Real>(
    field: &dyn VelocityField<T>,
    starts: &[Vec3<T>],
    t_end: f64,
    span: f64,
    substeps: usize,
) -> Vec<Vec3<T>> {
    trace_characteristics(field, starts, t_end, span, substeps, 0.0).departure
}

/// Relative deformation gradients along backward characteristics.
pub fn deformation_gradient<T: Real>(
    field: &dyn VelocityField<T>,
    starts: &[Vec3<T>],
    t_end: f64,
    span: f64,
    substeps: usize,
) -> Vec<Mat3<T>> {
    trace_characteristics(field, starts, t_end, span, substeps, 0.0).deformation
}

/// Numerical settings of the flow-map branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowMapSettings {
    /// RK4 substeps per characteristic solve.
    pub substeps: usize,
    /// Determinant tolerance; a step fails beyond ten times this.
    pub tol_det: f64,
    /// Largest Taylor order for the conformation tensor at departure points.
    pub sigma_order: u32,
    /// Largest Taylor order for the mollified velocity.
    pub velocity_order: u32,
    /// Relative truncation bound that selects the Taylor orders per step.
    pub taylor_tol: f64,
}

impl Default for FlowMapSettings {
    fn default() -> Self {
        Self { substeps: 1, tol_det: 1e-6, sigma_order: 10, velocity_order: 10, taylor_tol: 1e-10 }
    }
}

/// Upper-triangle component indices of a row-major 3x3 tensor.
const UPPER: [usize; 6] = [0, 4, 8, 1, 2, 5];

/// Result of one conformation update.
#[derive(Clone, Debug)]
pub struct SigmaStep<T: Real> {
    pub sigma: Field<T>,
    pub max_det_defect: f64,
}

/// Advances `sigma_n` over `span` ending at `t_end`.
pub fn sigma_step_flowmap<T: Real>(
    sigma_n: &Field<T>,
    field: &dyn VelocityField<T>,
    params: &PhysParams,
    t_end: f64,
    span: f64,
    settings: &FlowMapSettings,
) -> Result<SigmaStep<T>> {
    sigma_n.expect_rank(Rank::Tensor)?;
    let torus = sigma_n.torus().clone();
    let grid = torus.grid();
    let starts: Vec<Vec3<T>> = (0..grid.len()).map(|i| grid.node_position(i)).collect();
    let gamma = params.gamma();
    let flow = trace_characteristics(field, &starts, t_end, span, settings.substeps, gamma);
    let defect = flow.max_det_defect();
    let limit = 10.0 * settings.tol_det;
    if !(defect <= limit) {
        return Err(Error::DeterminantDrift { defect, limit });
    }
    let reach = flow
        .displacement
        .iter()
        .map(|d| d.iter().map(|c| c.to_f64_lossy().powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let order =
        NodeTaylor::required_order(sigma_n, Some(&UPPER), reach, settings.taylor_tol, settings.sigma_order, false);
    let taylor = NodeTaylor::new(sigma_n, order, Some(&UPPER));
    let decay = T::lit((-gamma * span).exp());
    let delta = T::lit(params.delta());
    let mut nodal = vec![vec![T::zero(); grid.len()]; 9];
    let mut up = [T::zero(); 6];
    for x in 0..grid.len() {
        taylor.eval_near(x, flow.displacement[x], &mut up);
        let s0: Mat3<T> = [[up[0], up[3], up[4]], [up[3], up[1], up[5]], [up[4], up[5], up[2]]];
        let hm = &flow.deformation[x];
        let hs = mat_mul(hm, &s0);
        let out = mat_mul_t(&hs, hm);
        let q = &flow.gram_integral[x];
        for i in 0..3 {
            for j in i..3 {
                let v = decay * T::lit(0.5) * (out[i][j] + out[j][i]) + delta * T::lit(0.5) * (q[i][j] + q[j][i]);
                nodal[3 * i + j][x] = v;
                nodal[3 * j + i][x] = v;
            }
        }
    }
    let sigma = Field::from_physical(&torus, Rank::Tensor, nodal)?.dealiased();
    Ok(SigmaStep { sigma, max_det_defect: defect })
}

/// Summary of a flow-map run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlowRunStats {
    pub steps: usize,
    pub max_det_defect: f64,
}

/// `sigma` advanced by the velocity of `state`, frozen, over `span`.
fn advance_sigma<T: Real>(
    state: &SimState<T>,
    pr: &Problem<T>,
    span: f64,
    settings: &FlowMapSettings,
    stats: &mut FlowRunStats,
) -> Result<Field<T>> {
    let ju = pr.mollifier.apply(&state.u)?;
    // sum |u_k| bounds the speed, hence the distance travelled in `span`.
    let speed = (0..3)
        .map(|c| {
            let sum: f64 = ju.spectral()[c]
                .iter()
                .enumerate()
                .map(|(s, z)| ju.torus().parseval_weight(s).to_f64_lossy() * z.norm().to_f64_lossy())
                .sum();
            sum * sum
        })
        .sum::<f64>()
        .sqrt();
    let order = NodeTaylor::required_order(&ju, None, speed * span, settings.taylor_tol, settings.velocity_order, true);
    let slab = VelocitySlab::stationary(&ju, order)?;
    let step = sigma_step_flowmap(&state.sigma, &slab, &pr.params, state.t, span, settings)?;
    stats.max_det_defect = stats.max_det_defect.max(step.max_det_defect);
    Ok(step.sigma)
}

/// Advances `state` to `state.t + horizon` with `eps = 0`.
///
/// Each macro step is the symmetric splitting: conformation transport over
/// `dt/2` with the velocity frozen, vorticity over `dt` with the conformation
/// frozen, conformation over `dt/2`. Adjacent conformation half-steps are
/// fused between records. On error `state` holds the last completed record
/// or step.
pub fn run_nondiffusive<T: Real>(
    state: &mut SimState<T>,
    pr: &Problem<T>,
    horizon: f64,
    dt: f64,
    stride: usize,
    settings: &FlowMapSettings,
    sink: &mut Sink<'_, T>,
) -> Result<FlowRunStats> {
    if pr.params.eps != 0.0 {
        return Err(Error::InvalidParameter("the flow-map branch needs eps = 0".into()));
    }
    let (steps, dt) = step_plan(horizon, dt)?;
    let stride = stride.max(1);
    let t0 = state.t;
    let mut stats = FlowRunStats::default();
    sink(state)?;
    if steps == 0 {
        return Ok(stats);
    }
    // `pending` marks a conformation lagging half a step behind the vorticity.
    let mut work = state.clone();
    let mut pending = false;
    for k in 1..=steps {
        let lead = if pending { dt } else { 0.5 * dt };
        let sigma = advance_sigma(&work, pr, lead, settings, &mut stats)?;
        work.sigma = sigma;
        let (omega, u) = step_vorticity(&work, &work.sigma, pr, dt)?;
        work.omega = omega;
        work.u = u;
        work.t = t0 + k as f64 * dt;
        pending = true;
        if k % stride == 0 || k == steps {
            let sigma = advance_sigma(&work, pr, 0.5 * dt, settings, &mut stats)?;
            let done = finish_state(work.t, work.omega.clone(), sigma)?;
            if !done.is_finite() {
                return Err(Error::NonFinite { t: done.t });
            }
            *state = done.clone();
            work = done;
            pending = false;
            sink(state)?;
        } else if !work.omega.is_finite() || !work.sigma.is_finite() {
            return Err(Error::NonFinite { t: work.t });
        }
        stats.steps = k;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{random_scalar, Grid, Torus};
    use std::f64::consts::{PI, TAU};

    struct Constant([f64; 3]);
    impl VelocityField<f64> for Constant {
        fn sample(&self, _: usize, _: Vec3<f64>, _: Vec3<f64>, _: f64) -> (Vec3<f64>, Mat3<f64>) {
            (self.0, [[0.0; 3]; 3])
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

    #[test]
    fn relaxation_weights_reduce_to_simpson() {
        let w: [f64; 3] = relaxation_weights(0.3, 0.1, 0.0);
        for (a, b) in w.iter().zip([1.0 / 60.0, 4.0 / 60.0, 1.0 / 60.0]) {
            assert!((a - b).abs() < 1e-16);
        }
        // exact on constants and linear functions for any gamma
        let (a, h, g) = (0.2, 0.05, 3.0);
        let w: [f64; 3] = relaxation_weights(a, h, g);
        let exact0 = ((-g * a).exp() - (-g * (a + h)).exp()) / g;
        assert!((w.iter().sum::<f64>() - exact0).abs() < 1e-16);
        let lin = w[1] * (a + 0.5 * h) + w[0] * a + w[2] * (a + h);
        let exact1 = ((a + 1.0 / g) * (-g * a).exp() - (a + h + 1.0 / g) * (-g * (a + h)).exp()) / g;
        assert!((lin - exact1).abs() < 1e-15);
    }

    #[test]
    fn required_order_meets_the_bound() {
        let t = Torus::<f64>::new(Grid::cube(16).unwrap());
        let f = random_scalar(&t, 5, 4).unwrap();
        let r = 0.01;
        let m = NodeTaylor::required_order(&f, None, r, 1e-10, 12, false);
        assert!(m < 12);
        let tay = NodeTaylor::new(&f, m, None);
        let pts: Vec<Vec3<f64>> = (0..50)
            .map(|i| {
                let x = t.grid().node_position::<f64>(37 * i);
                [x[0] + 0.005, x[1] - 0.004, x[2] + 0.0055]
            })
            .collect();
        let direct = offgrid_eval(&f, &pts);
        let scale: f64 = direct[0].iter().fold(0.0, |a, v| a.max(v.abs()));
        for (p, want) in pts.iter().zip(&direct[0]) {
            let (node, disp) = nearest_node(&t.grid(), *p);
            assert!(disp.iter().map(|d| d * d).sum::<f64>().sqrt() <= r);
            let mut out = [0.0];
            tay.eval_near(node, disp, &mut out);
            assert!((out[0] - want).abs() <= 1e-9 * scale.max(1.0));
        }
        assert_eq!(NodeTaylor::required_order(&f, None, 0.0, 1e-10, 12, false), 1);
    }

    #[test]
    fn taylor_indices_are_complete() {
        assert_eq!(taylor_indices(0).len(), 1);
        assert_eq!(taylor_indices(5).len(), 56);
        assert_eq!(taylor_indices(6).len(), 84);
    }

    #[test]
    fn offgrid_matches_analytic_and_nodes() {
        let t = Torus::<f64>::new(Grid::cube(8).unwrap());
        let f = Field::scalar_fn(&t, |x| (TAU * x[0]).sin());
        let v = offgrid_eval(&f, &[[0.3, 0.7, 0.1]]);
        assert!((v[0][0] - (0.6 * PI).sin()).abs() < 1e-13);
        let g = random_scalar(&t, 2, 3).unwrap();
        let pts: Vec<_> = (0..t.grid().len()).map(|i| t.grid().node_position(i)).collect();
        let vals = offgrid_eval(&g, &pts);
        for (a, b) in vals[0].iter().zip(&g.physical()[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_matches_direct_summation() {
        let t = Torus::<f64>::new(Grid::cube(16).unwrap());
        let g = random_scalar(&t, 7, 3).unwrap();
        let tay = NodeTaylor::new(&g, 8, None);
        let x = [0.312, 0.049, 0.777];
        let exact = offgrid_eval(&g, &[x])[0][0];
        let mut out = [0.0];
        tay.eval(x, &mut out);
        assert!((out[0] - exact).abs() < 1e-6 * g.max_abs());
    }

    #[test]
    fn constant_velocity_translates() {
        let c = [0.1, -0.2, 0.05];
        let starts = vec![[0.5, 0.5, 0.5], [0.0, 0.0, 0.0]];
        let dep = backward_trajectory(&Constant(c), &starts, 1.0, 0.5, 3);
        for (s, d) in starts.iter().zip(&dep) {
            for a in 0..3 {
                let e = (s[a] - 0.5 * c[a]).rem_euclid(1.0);
                assert!((d[a] - e).abs() < 1e-14);
            }
        }
        let h = deformation_gradient(&Constant(c), &starts, 1.0, 0.5, 3);
        assert_eq!(h[0], identity3());
    }

    #[test]
    fn shear_deformation_is_exact() {
        let lambda = 0.7;
        let h = deformation_gradient(&Shear(lambda), &[[0.2, 0.4, 0.6]], 0.0, 0.3, 1);
        let mut expect = identity3::<f64>();
        expect[0][1] = lambda * 0.3;
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[0][i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }
}
