//! Vector calculus for the vorticity formulation.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{derivative, Field, Rank};

#[inline]
fn times_i<T: Real>(c: Complex<T>, k: T) -> Complex<T> {
    Complex::new(-c.im * k, c.re * k)
}

/// `curl u`.
pub fn curl<T: Real>(u: &Field<T>) -> Result<Field<T>> {
    u.expect_rank(Rank::Vector)?;
    let torus = u.torus().clone();
    let s_len = torus.grid().spectral_len();
    let src = u.spectral();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = vec![vec![zero; s_len]; 3];
    for s in 0..s_len {
        let k = torus.derivative_vector(s);
        let (a, b, c) = (src[0][s], src[1][s], src[2][s]);
        out[0][s] = times_i(c, k[1]) - times_i(b, k[2]);
        out[1][s] = times_i(a, k[2]) - times_i(c, k[0]);
        out[2][s] = times_i(b, k[0]) - times_i(a, k[1]);
    }
    Field::from_spectral(&torus, Rank::Vector, out)
}

/// `div u`.
pub fn divergence<T: Real>(u: &Field<T>) -> Result<Field<T>> {
    u.expect_rank(Rank::Vector)?;
    let torus = u.torus().clone();
    let src = u.spectral();
    let out = (0..torus.grid().spectral_len())
        .map(|s| {
            let k = torus.derivative_vector(s);
            times_i(src[0][s], k[0]) + times_i(src[1][s], k[1]) + times_i(src[2][s], k[2])
        })
        .collect();
    Field::from_spectral(&torus, Rank::Scalar, vec![out])
}

/// `grad phi`.
pub fn gradient<T: Real>(phi: &Field<T>) -> Result<Field<T>> {
    phi.expect_rank(Rank::Scalar)?;
    let parts: Vec<Field<T>> = (0..3).map(|a| derivative(phi, a)).collect();
    Field::from_components(Rank::Vector, &parts)
}

/// Row divergence `(div sigma)_i = sum_j d_j sigma_ij`.
pub fn div_tensor<T: Real>(sigma: &Field<T>) -> Result<Field<T>> {
    sigma.expect_rank(Rank::Tensor)?;
    let torus = sigma.torus().clone();
    let src = sigma.spectral();
    let s_len = torus.grid().spectral_len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = vec![vec![zero; s_len]; 3];
    for s in 0..s_len {
        let k = torus.derivative_vector(s);
        for (i, row) in out.iter_mut().enumerate() {
            row[s] = times_i(src[3 * i][s], k[0]) + times_i(src[3 * i + 1][s], k[1]) + times_i(src[3 * i + 2][s], k[2]);
        }
    }
    Field::from_spectral(&torus, Rank::Vector, out)
}

/// `curl div sigma`.
pub fn curl_div_tensor<T: Real>(sigma: &Field<T>) -> Result<Field<T>> {
    curl(&div_tensor(sigma)?)
}

/// Velocity gradient `(grad v)_ik = d_k v^i`, as a tensor.
pub fn velocity_gradient<T: Real>(v: &Field<T>) -> Result<Field<T>> {
    v.expect_rank(Rank::Vector)?;
    let torus = v.torus().clone();
    let src = v.spectral();
    let s_len = torus.grid().spectral_len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = vec![vec![zero; s_len]; 9];
    for s in 0..s_len {
        let k = torus.derivative_vector(s);
        for i in 0..3 {
            for kk in 0..3 {
                out[3 * i + kk][s] = times_i(src[i][s], k[kk]);
            }
        }
    }
    Field::from_spectral(&torus, Rank::Tensor, out)
}

/// Nodal values of `d_a f_c` for every component `c` and axis `a`,
/// indexed `[3 * c + a]`.
fn nodal_gradients<T: Real>(f: &Field<T>) -> Vec<Vec<T>> {
    let torus = f.torus();
    let s_len = torus.grid().spectral_len();
    let mut buf = vec![Complex::new(T::zero(), T::zero()); s_len];
    let mut out = Vec::with_capacity(3 * f.spectral().len());
    for comp in f.spectral() {
        for a in 0..3 {
            let grid = torus.grid();
            for (s, slot) in buf.iter_mut().enumerate() {
                let k = torus.derivative_symbol(a, grid.mode_coords(s)[a]);
                *slot = times_i(comp[s], k);
            }
            out.push(torus.inverse(&buf));
        }
    }
    out
}

/// Transforms nodal arrays back and applies the 2/3 rule.
fn dealiased_from_nodal<T: Real>(like: &Field<T>, rank: Rank, nodal: Vec<Vec<T>>) -> Result<Field<T>> {
    let torus = like.torus();
    let spec = nodal
        .iter()
        .map(|p| {
            let mut s = torus.forward(p);
            torus.dealias(&mut s);
            s
        })
        .collect();
    Field::from_spectral(torus, rank, spec)
}

/// `(v . grad) f` componentwise, for `f` of any rank, dealiased.
pub fn advect<T: Real>(v: &Field<T>, f: &Field<T>) -> Result<Field<T>> {
    v.expect_rank(Rank::Vector)?;
    v.check_grid(f)?;
    let vp = v.physical();
    let grads = nodal_gradients(f);
    let n = v.grid().len();
    let nodal: Vec<Vec<T>> = (0..f.spectral().len())
        .map(|c| {
            let (g0, g1, g2) = (&grads[3 * c], &grads[3 * c + 1], &grads[3 * c + 2]);
            (0..n).map(|x| vp[0][x] * g0[x] + vp[1][x] * g1[x] + vp[2][x] * g2[x]).collect()
        })
        .collect();
    dealiased_from_nodal(f, f.rank(), nodal)
}

/// `Omega(v, u)` with `Omega_i = eps_ijk sum_m (d_j v^m)(d_m u^k)`, so that
/// `curl((v . grad) u) = (v . grad) curl u + Omega(v, u)`.
pub fn omega_nonlinear<T: Real>(v: &Field<T>, u: &Field<T>) -> Result<Field<T>> {
    v.expect_rank(Rank::Vector)?;
    u.expect_rank(Rank::Vector)?;
    v.check_grid(u)?;
    let gv = nodal_gradients(v); // [3*m + j] = d_j v^m
    let gu = nodal_gradients(u); // [3*k + m] = d_m u^k
    let n = v.grid().len();
    let p = |j: usize, k: usize, x: usize| -> T {
        gv[j][x] * gu[3 * k][x] + gv[3 + j][x] * gu[3 * k + 1][x] + gv[6 + j][x] * gu[3 * k + 2][x]
    };
    let mut nodal = vec![vec![T::zero(); n]; 3];
    for x in 0..n {
        nodal[0][x] = p(1, 2, x) - p(2, 1, x);
        nodal[1][x] = p(2, 0, x) - p(0, 2, x);
        nodal[2][x] = p(0, 1, x) - p(1, 0, x);
    }
    dealiased_from_nodal(v, Rank::Vector, nodal)
}

/// Upper-convected stretching `(grad v) sigma + sigma (grad v)^T`, dealiased.
pub fn stretching<T: Real>(v: &Field<T>, sigma: &Field<T>) -> Result<Field<T>> {
    v.expect_rank(Rank::Vector)?;
    sigma.expect_rank(Rank::Tensor)?;
    v.check_grid(sigma)?;
    let g = nodal_gradients(v); // [3*i + k] = d_k v^i
    let sp = sigma.physical();
    let n = v.grid().len();
    let mut nodal = vec![vec![T::zero(); n]; 9];
    for x in 0..n {
        for i in 0..3 {
            for j in i..3 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc = acc + g[3 * i + k][x] * sp[3 * k + j][x] + sp[3 * i + k][x] * g[3 * j + k][x];
                }
                nodal[3 * i + j][x] = acc;
                nodal[3 * j + i][x] = acc;
            }
        }
    }
    dealiased_from_nodal(v, Rank::Tensor, nodal)
}

/// Mean tolerance for [`velocity_from_vorticity`].
fn mean_tolerance<T: Real>(omega: &Field<T>) -> T {
    T::roundoff() * (T::one() + omega.l2_norm())
}

/// Solenoidal, mean-zero velocity whose curl is the solenoidal part of `omega`.
///
/// Per mode, `uhat = i kappa x omegahat / |kappa|^2`.
pub fn velocity_from_vorticity<T: Real>(omega: &Field<T>) -> Result<Field<T>> {
    omega.expect_rank(Rank::Vector)?;
    let mean = omega.mean();
    let worst = mean.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if worst > mean_tolerance(omega) {
        return Err(Error::NonZeroMean { value: worst.to_f64_lossy() });
    }
    let torus = omega.torus().clone();
    let src = omega.spectral();
    let s_len = torus.grid().spectral_len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = vec![vec![zero; s_len]; 3];
    for s in 0..s_len {
        let k = torus.derivative_vector(s);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == T::zero() {
            continue;
        }
        let inv = T::one() / k2;
        let (a, b, c) = (src[0][s], src[1][s], src[2][s]);
        out[0][s] = (times_i(c, k[1]) - times_i(b, k[2])) * inv;
        out[1][s] = (times_i(a, k[2]) - times_i(c, k[0])) * inv;
        out[2][s] = (times_i(b, k[0]) - times_i(a, k[1])) * inv;
    }
    Field::from_spectral(&torus, Rank::Vector, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{random_divfree, Grid, Torus};
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn torus(n: usize) -> Arc<Torus<f64>> {
        Torus::new(Grid::cube(n).unwrap())
    }

    fn rel(a: &Field<f64>, b: &Field<f64>) -> f64 {
        a.sub(b).unwrap().l2_norm() / b.l2_norm().max(1e-300)
    }

    #[test]
    fn curl_of_shear() {
        let t = torus(8);
        let u = Field::vector_fn(&t, |x| [(TAU * x[1]).sin(), 0.0, 0.0]);
        let w = curl(&u).unwrap();
        let expect = Field::vector_fn(&t, |x| [0.0, 0.0, -TAU * (TAU * x[1]).cos()]);
        assert!(w.sub(&expect).unwrap().l2_norm() < 1e-13);
    }

    #[test]
    fn curl_of_gradient_and_constant_vanish() {
        let t = torus(8);
        let phi = Field::scalar_fn(&t, |x| (TAU * x[0]).sin());
        assert!(curl(&gradient(&phi).unwrap()).unwrap().l2_norm() < 1e-13);
        let c = Field::constant(&t, Rank::Vector, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(curl(&c).unwrap().l2_norm(), 0.0);
    }

    #[test]
    fn curl_div_of_isotropic_tensors_vanishes() {
        let t = torus(8);
        let c = Field::constant(&t, Rank::Tensor, &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(curl_div_tensor(&c).unwrap().l2_norm(), 0.0);
        let s = Field::tensor_fn(&t, |x| {
            let p = (TAU * x[0]).sin();
            [[p, 0.0, 0.0], [0.0, p, 0.0], [0.0, 0.0, p]]
        });
        assert!(curl_div_tensor(&s).unwrap().l2_norm() < 1e-12);
    }

    #[test]
    fn omega_vanishes_for_constant_arguments() {
        let t = torus(8);
        let c = Field::constant(&t, Rank::Vector, &[1.0, -1.0, 0.5]).unwrap();
        let u = random_divfree(&t, 2, 2, 1.0).unwrap();
        assert!(omega_nonlinear(&c, &u).unwrap().l2_norm() < 1e-14);
        assert!(omega_nonlinear(&u, &c).unwrap().l2_norm() < 1e-14);
    }

    #[test]
    fn omega_identity() {
        let t = torus(16);
        let v = random_divfree(&t, 4, 3, 1.0).unwrap();
        let u = random_divfree(&t, 5, 3, 1.0).unwrap();
        let lhs = curl(&advect(&v, &u).unwrap()).unwrap();
        let rhs = advect(&v, &curl(&u).unwrap()).unwrap().add(&omega_nonlinear(&v, &u).unwrap()).unwrap();
        assert!(rel(&rhs, &lhs) < 1e-10);
    }

    #[test]
    fn advection_is_skew() {
        let t = torus(16);
        let v = random_divfree(&t, 6, 2, 1.0).unwrap();
        let f = random_divfree(&t, 7, 2, 1.0).unwrap();
        let a = advect(&v, &f).unwrap();
        assert!(f.inner(&a).unwrap().abs() < 1e-10);
    }

    #[test]
    fn velocity_recovery() {
        let t = torus(8);
        let w = Field::vector_fn(&t, |x| [0.0, 0.0, -TAU * (TAU * x[1]).cos()]);
        let u = velocity_from_vorticity(&w).unwrap();
        let expect = Field::vector_fn(&t, |x| [(TAU * x[1]).sin(), 0.0, 0.0]);
        assert!(u.sub(&expect).unwrap().l2_norm() < 1e-13);
        let z = Field::zeros(&t, Rank::Vector);
        assert_eq!(velocity_from_vorticity(&z).unwrap().l2_norm(), 0.0);
        let bad = Field::constant(&t, Rank::Vector, &[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(velocity_from_vorticity(&bad), Err(Error::NonZeroMean { .. })));
    }

    #[test]
    fn stretching_is_symmetric() {
        let t = torus(8);
        let v = random_divfree(&t, 1, 2, 1.0).unwrap();
        let s = Field::tensor_fn(&t, |x| {
            let a = 1.0 + 0.3 * (TAU * x[2]).sin();
            [[a, 0.1, 0.0], [0.1, 1.0, 0.2], [0.0, 0.2, 2.0]]
        });
        let out = stretching(&v, &s).unwrap();
        assert!(out.symmetry_defect().unwrap() < 1e-14);
    }
}
