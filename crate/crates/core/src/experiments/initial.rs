//! Initial-condition library.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{random_divfree, random_scalar, Field, Rank, Torus};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    /// `u = A (sin x cos y cos z, -cos x sin y cos z, 0)` (angles `2 pi x^i`), `sigma = I`.
    TaylorGreen,
    /// Random solenoidal velocity, `sigma = I + 0.1 G G^T` with random smooth `G`.
    Random,
    /// `x^3`-independent planar data with `u^3 = 0` and `sigma_i3 = 0`.
    Embedded2d,
    /// Fluid at rest with isotropic conformation; at the level `delta / gamma`
    /// this is the stationary state.
    Equilibrium,
}

impl FromStr for InitialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor_green" => Ok(Self::TaylorGreen),
            "random" => Ok(Self::Random),
            "embedded_2d" => Ok(Self::Embedded2d),
            "equilibrium" => Ok(Self::Equilibrium),
            other => Err(Error::Config(format!("unknown initial kind `{other}`"))),
        }
    }
}

impl InitialKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::TaylorGreen => "taylor_green",
            Self::Random => "random",
            Self::Embedded2d => "embedded_2d",
            Self::Equilibrium => "equilibrium",
        }
    }
}

/// Largest admissible band limit, capped at `cap`.
fn band<T: Real>(torus: &Torus<T>, cap: usize) -> usize {
    let n = torus.grid().dims().into_iter().min().unwrap_or(4);
    cap.min((n - 1) / 3).max(1)
}

/// `(u0, sigma0)` for `kind`. `amp` scales the velocity; for
/// [`InitialKind::Equilibrium`] it is the isotropic conformation level.
pub fn initial_condition<T: Real>(
    kind: InitialKind,
    torus: &Arc<Torus<T>>,
    seed: u64,
    amp: f64,
) -> Result<(Field<T>, Field<T>)> {
    let a = T::lit(amp);
    let tau = T::TAU();
    let (o, z) = (T::one(), T::zero());
    let eye = [[o, z, z], [z, o, z], [z, z, o]];
    match kind {
        InitialKind::TaylorGreen => {
            let u = Field::vector_fn(torus, |x| {
                let (s1, c1) = (tau * x[0]).sin_cos();
                let (s2, c2) = (tau * x[1]).sin_cos();
                let c3 = (tau * x[2]).cos();
                [a * s1 * c2 * c3, -a * c1 * s2 * c3, z]
            });
            Ok((u, Field::tensor_fn(torus, |_| eye)))
        }
        InitialKind::Random => {
            let u = random_divfree(torus, seed, band(torus, 3), a)?;
            let kg = band(torus, 2).min(torus.grid().dims().into_iter().min().unwrap_or(4) / 6).max(1);
            let g: Vec<Field<T>> = (0..9)
                .map(|c| random_scalar(torus, seed.wrapping_mul(31).wrapping_add(c as u64 + 1), kg))
                .collect::<Result<_>>()?;
            let gp: Vec<&[T]> = g.iter().map(|f| f.physical()[0].as_slice()).collect();
            let n = torus.grid().len();
            let w = T::lit(0.1);
            let mut nodal = vec![vec![z; n]; 9];
            for x in 0..n {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut acc = z;
                        for k in 0..3 {
                            acc = acc + gp[3 * i + k][x] * gp[3 * j + k][x];
                        }
                        nodal[3 * i + j][x] = eye[i][j] + w * acc;
                    }
                }
            }
            Ok((u, Field::from_physical(torus, Rank::Tensor, nodal)?))
        }
        InitialKind::Embedded2d => {
            let u = Field::vector_fn(torus, |x| {
                let (s1, c1) = (tau * x[0]).sin_cos();
                let (s2, c2) = (tau * x[1]).sin_cos();
                [a * s1 * c2, -a * c1 * s2, z]
            });
            let half = T::lit(0.5);
            let sigma = Field::tensor_fn(torus, |x| {
                let g = [(tau * x[1]).sin(), (tau * x[0]).cos()];
                [
                    [o + half * g[0] * g[0], half * g[0] * g[1], z],
                    [half * g[0] * g[1], o + half * g[1] * g[1], z],
                    [z, z, z],
                ]
            });
            Ok((u, sigma))
        }
        InitialKind::Equilibrium => {
            let u = Field::zeros(torus, Rank::Vector);
            let sigma = Field::tensor_fn(torus, |_| [[a, z, z], [z, a, z], [z, z, a]]);
            Ok((u, sigma))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::min_eig_sigma;
    use crate::spectral::{derivative, Grid};
    use crate::vorticity::divergence;

    fn torus() -> Arc<Torus<f64>> {
        Torus::new(Grid::new(16, 16, 8).unwrap())
    }

    #[test]
    fn taylor_green_is_solenoidal() {
        let (u, s) = initial_condition(InitialKind::TaylorGreen, &torus(), 0, 1.0).unwrap();
        assert!(divergence(&u).unwrap().l2_norm() < 1e-12);
        assert!(u.mean().iter().all(|m| m.abs() < 1e-15));
        assert_eq!(min_eig_sigma(&s).unwrap(), 1.0);
    }

    #[test]
    fn embedded_data_is_planar() {
        let (u, s) = initial_condition(InitialKind::Embedded2d, &torus(), 0, 1.0).unwrap();
        assert_eq!(u.component(2).l2_norm(), 0.0);
        for c in [2, 5, 6, 7, 8] {
            assert_eq!(s.component(c).l2_norm(), 0.0);
        }
        assert!(derivative(&u, 2).l2_norm() < 1e-15);
        assert!(derivative(&s, 2).l2_norm() < 1e-15);
    }

    #[test]
    fn random_data_is_psd() {
        let (u, s) = initial_condition(InitialKind::Random, &torus(), 4, 1.0).unwrap();
        assert!((u.l2_norm() - 1.0).abs() < 1e-10);
        assert!(min_eig_sigma(&s).unwrap() >= 0.0);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("vortex_ring".parse::<InitialKind>().is_err());
        assert_eq!("embedded_2d".parse::<InitialKind>().unwrap(), InitialKind::Embedded2d);
    }
}
