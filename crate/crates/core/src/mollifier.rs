//! Convolution with a fixed, even, compactly supported bump, applied as a
//! Fourier multiplier.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{Field, Torus};

/// Default bump radius.
pub const DEFAULT_WIDTH: f64 = 0.125;
/// Default oversampling factor for the derivative-bound constant.
pub const DEFAULT_OVERSAMPLE: usize = 4;

/// Largest multi-index order entering [`MollifierSpec::constant`].
const K_ORDER: u32 = 4;

/// Unnormalised radial profile `exp(-1/(1-s^2))` on `s < 1`.
pub fn bump_profile(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Radial Fourier transform of the normalised bump of radius `h`, tabulated
/// on demand by composite Gauss-Legendre quadrature.
struct RadialTransform {
    rule: GaussLegendre,
    h: f64,
    zero_moment: f64,
}

impl RadialTransform {
    fn new(h: f64) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(32).expect("nonzero"));
        let mut rt = Self { rule, h, zero_moment: 1.0 };
        rt.zero_moment = rt.moment(0.0);
        rt
    }

    /// `int_0^1 s^2 b(s) sinc(2 pi r h s) ds`.
    fn moment(&self, r: f64) -> f64 {
        let arg = std::f64::consts::TAU * r * self.h;
        let panels = 8 + (arg / 2.0).ceil() as usize;
        let w = 1.0 / panels as f64;
        (0..panels)
            .map(|p| {
                let a = p as f64 * w;
                self.rule.integrate(a, a + w, |s| {
                    let z = arg * s;
                    let sinc = if z.abs() < 1e-8 { 1.0 - z * z / 6.0 } else { z.sin() / z };
                    s * s * bump_profile(s) * sinc
                })
            })
            .sum()
    }

    /// `etahat(|k|)` for `|k|^2 = k2`.
    fn eval(&self, k2: f64) -> f64 {
        if k2 == 0.0 {
            1.0
        } else {
            self.moment(k2.sqrt()) / self.zero_moment
        }
    }
}

/// The operator `J f = eta * f` on one torus.
#[derive(Clone, Debug)]
pub struct MollifierSpec<T: Real> {
    torus: Arc<Torus<T>>,
    width: f64,
    oversample: usize,
    /// `etahat` per half-spectrum slot.
    multiplier: Vec<T>,
    constant: f64,
}

/// Builds the mollifier of radius `h` with the default oversampling.
pub fn build_mollifier<T: Real>(h: f64, torus: &Arc<Torus<T>>) -> Result<MollifierSpec<T>> {
    MollifierSpec::new(h, DEFAULT_OVERSAMPLE, torus)
}

impl<T: Real> MollifierSpec<T> {
    pub fn new(h: f64, oversample: usize, torus: &Arc<Torus<T>>) -> Result<Self> {
        if !(h > 0.0 && h < 0.5) {
            return Err(Error::InvalidParameter(format!("mollifier width {h} outside (0, 1/2)")));
        }
        if oversample == 0 {
            return Err(Error::InvalidParameter("mollifier oversample must be >= 1".into()));
        }
        let grid = torus.grid();
        let radial = RadialTransform::new(h);

        // etahat depends on |k|^2 only; tabulate it once per integer radius.
        let dims = grid.dims();
        let kmax: Vec<i64> = dims.iter().map(|&n| (oversample * n / 2) as i64).collect();
        let k2max = kmax.iter().map(|k| k * k).sum::<i64>() as usize;
        let table: Vec<f64> = (0..=k2max).map(|k2| radial.eval(k2 as f64)).collect();

        let multiplier = (0..grid.spectral_len())
            .map(|s| {
                let k = grid.mode_wavevector(s);
                T::lit(table[(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize])
            })
            .collect();

        let constant = derivative_bound(&table, &kmax);
        Ok(Self { torus: torus.clone(), width: h, oversample, multiplier, constant })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn torus(&self) -> &Arc<Torus<T>> {
        &self.torus
    }

    /// Fourier multiplier on the half spectrum.
    pub fn multiplier(&self) -> &[T] {
        &self.multiplier
    }

    /// `etahat` at an integer wavevector, evaluated directly.
    pub fn symbol(&self, k: [i64; 3]) -> f64 {
        RadialTransform::new(self.width).eval((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
    }

    /// `J f`, componentwise.
    pub fn apply(&self, f: &Field<T>) -> Result<Field<T>> {
        if f.grid() != self.torus.grid() {
            return Err(Error::GridMismatch { left: self.torus.grid().dims(), right: f.grid().dims() });
        }
        let m = &self.multiplier;
        Ok(f.map_spectral(|s, c| Complex::new(c.re * m[s], c.im * m[s])))
    }

    /// `K = sum_{|lambda| <= 4} ||D^lambda eta||_{L^2}`, so that
    /// `sup |D^lambda J f| <= K ||f||_{L^2}` for every `|lambda| <= 4`.
    pub fn constant(&self) -> f64 {
        self.constant
    }
}

/// Free-function form of [`MollifierSpec::apply`].
pub fn apply<T: Real>(j: &MollifierSpec<T>, f: &Field<T>) -> Result<Field<T>> {
    j.apply(f)
}

/// Free-function form of [`MollifierSpec::constant`].
pub fn mollifier_constant<T: Real>(j: &MollifierSpec<T>) -> f64 {
    j.constant()
}

/// Multi-indices with `|lambda| <= order`.
fn multi_indices(order: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for a in 0..=order {
        for b in 0..=(order - a) {
            for c in 0..=(order - a - b) {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Sums `||D^lambda eta||_{L^2}` over `|lambda| <= 4` via Parseval on the
/// box `|k_a| <= kmax_a`.
fn derivative_bound(table: &[f64], kmax: &[i64]) -> f64 {
    let lambdas = multi_indices(K_ORDER);
    let tau2 = std::f64::consts::TAU.powi(2);
    let mut sums = vec![0.0f64; lambdas.len()];
    let pow_table = |k: i64| -> [f64; (K_ORDER + 1) as usize] {
        let q = tau2 * (k * k) as f64;
        let mut p = [1.0; (K_ORDER + 1) as usize];
        for i in 1..p.len() {
            p[i] = p[i - 1] * q;
        }
        p
    };
    for k1 in -kmax[0]..=kmax[0] {
        let p1 = pow_table(k1);
        for k2 in -kmax[1]..=kmax[1] {
            let p2 = pow_table(k2);
            for k3 in -kmax[2]..=kmax[2] {
                let p3 = pow_table(k3);
                let e = table[(k1 * k1 + k2 * k2 + k3 * k3) as usize];
                let e2 = e * e;
                for (acc, l) in sums.iter_mut().zip(&lambdas) {
                    *acc += e2 * p1[l[0] as usize] * p2[l[1] as usize] * p3[l[2] as usize];
                }
            }
        }
    }
    sums.iter().map(|s| s.sqrt()).sum()
}
