//! Fourier collocation on the unit periodic cube.
//!
//! Real fields are stored through their half spectrum (last axis truncated to
//! `n3/2 + 1` modes) with the normalisation
//!
//! ```text
//! f(x) = sum_k fhat(k) exp(2 pi i k.x),   fhat(0) = mean of f
//! ```
//!
//! so that Parseval reads `||f||^2 = sum_k |fhat(k)|^2` on the unit-volume torus.
//! Nodal values are produced on demand and cached inside the [`Field`].

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform periodic grid on `[0, 1)^3`, x³ index fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    n: [usize; 3],
}

impl Grid {
    pub fn new(n1: usize, n2: usize, n3: usize) -> Result<Self> {
        let dims = [n1, n2, n3];
        if dims.iter().any(|&n| n < 4 || n % 2 != 0) {
            return Err(Error::InvalidGrid { dims });
        }
        Ok(Self { n: dims })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.n
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Torus volume; always one.
    pub fn volume(&self) -> f64 {
        1.0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / self.n[axis] as f64
    }

    /// Shape of the stored half spectrum.
    pub fn spectral_dims(&self) -> [usize; 3] {
        [self.n[0], self.n[1], self.n[2] / 2 + 1]
    }

    pub fn spectral_len(&self) -> usize {
        let [a, b, c] = self.spectral_dims();
        a * b * c
    }

    /// Signed wavenumber of index `i` along `axis`, in `-n/2+1 ..= n/2`.
    pub fn wavenumber(&self, axis: usize, i: usize) -> i64 {
        let n = self.n[axis];
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    #[inline]
    pub fn node_index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        (i1 * self.n[1] + i2) * self.n[2] + i3
    }

    /// Inverse of [`Grid::node_index`].
    #[inline]
    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        let i3 = idx % self.n[2];
        let rest = idx / self.n[2];
        [rest / self.n[1], rest % self.n[1], i3]
    }

    pub fn node_position<T: Real>(&self, idx: usize) -> [T; 3] {
        let c = self.node_coords(idx);
        [0, 1, 2].map(|a| T::lit(c[a] as f64 / self.n[a] as f64))
    }

    /// Spectral multi-index `(i1, i2, j3)` of a half-spectrum slot.
    #[inline]
    pub fn mode_coords(&self, s: usize) -> [usize; 3] {
        let h3 = self.n[2] / 2 + 1;
        let j3 = s % h3;
        let rest = s / h3;
        [rest / self.n[1], rest % self.n[1], j3]
    }

    /// Signed integer wavevector of a half-spectrum slot.
    pub fn mode_wavevector(&self, s: usize) -> [i64; 3] {
        let c = self.mode_coords(s);
        [self.wavenumber(0, c[0]), self.wavenumber(1, c[1]), c[2] as i64]
    }

    /// Largest wavenumber kept by the 2/3 rule on `axis`.
    pub fn dealias_cutoff(&self, axis: usize) -> usize {
        self.n[axis] / 3
    }
}

/// Transform plans and wavenumber tables for one [`Grid`].
///
/// Shared by all fields on that grid through an `Arc`.
pub struct Torus<T: Real> {
    grid: Grid,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    fwd: [Arc<dyn Fft<T>>; 2],
    inv: [Arc<dyn Fft<T>>; 2],
    /// 2 pi k with the Nyquist entry zeroed (derivative symbol).
    deriv: [Vec<T>; 3],
    /// 2 pi k including Nyquist (Laplacian symbol).
    wave: [Vec<T>; 3],
    keep: [Vec<bool>; 3],
}

impl<T: Real> fmt::Debug for Torus<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Torus").field("grid", &self.grid).finish()
    }
}

impl<T: Real> Torus<T> {
    pub fn new(grid: Grid) -> Arc<Self> {
        let [n1, n2, n3] = grid.dims();
        let mut rp = RealFftPlanner::<T>::new();
        let mut cp = FftPlanner::<T>::new();
        let two_pi = T::TAU();
        let table = |axis: usize, len: usize, zero_nyquist: bool| -> Vec<T> {
            (0..len)
                .map(|i| {
                    let k = grid.wavenumber(axis, i);
                    if zero_nyquist && k.unsigned_abs() as usize * 2 == grid.dims()[axis] {
                        T::zero()
                    } else {
                        two_pi * T::lit(k as f64)
                    }
                })
                .collect()
        };
        let lens = grid.spectral_dims();
        let deriv = [0, 1, 2].map(|a| table(a, lens[a], true));
        let wave = [0, 1, 2].map(|a| table(a, lens[a], false));
        let keep = [0, 1, 2].map(|a| {
            (0..lens[a]).map(|i| grid.wavenumber(a, i).unsigned_abs() as usize <= grid.dealias_cutoff(a)).collect()
        });
        Arc::new(Self {
            grid,
            r2c: rp.plan_fft_forward(n3),
            c2r: rp.plan_fft_inverse(n3),
            fwd: [cp.plan_fft_forward(n1), cp.plan_fft_forward(n2)],
            inv: [cp.plan_fft_inverse(n1), cp.plan_fft_inverse(n2)],
            deriv,
            wave,
            keep,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Derivative symbol `2 pi k` along `axis` for index `i` (zero at Nyquist).
    #[inline]
    pub fn derivative_symbol(&self, axis: usize, i: usize) -> T {
        self.deriv[axis][i]
    }

    /// `|2 pi k|^2` of a half-spectrum slot.
    #[inline]
    pub fn laplacian_symbol(&self, s: usize) -> T {
        let [a, b, c] = self.grid.mode_coords(s);
        let (x, y, z) = (self.wave[0][a], self.wave[1][b], self.wave[2][c]);
        x * x + y * y + z * z
    }

    /// Derivative wavevector of a half-spectrum slot (Nyquist components zeroed).
    #[inline]
    pub fn derivative_vector(&self, s: usize) -> [T; 3] {
        let [a, b, c] = self.grid.mode_coords(s);
        [self.deriv[0][a], self.deriv[1][b], self.deriv[2][c]]
    }

    /// Parseval weight of a half-spectrum slot (2 for slots standing in for
    /// their conjugate partner, 1 otherwise).
    #[inline]
    pub fn parseval_weight(&self, s: usize) -> T {
        let n3 = self.grid.dims()[2];
        let j3 = s % (n3 / 2 + 1);
        if j3 == 0 || 2 * j3 == n3 {
            T::one()
        } else {
            T::lit(2.0)
        }
    }

    #[inline]
    pub fn is_kept(&self, s: usize) -> bool {
        let [a, b, c] = self.grid.mode_coords(s);
        self.keep[0][a] && self.keep[1][b] && self.keep[2][c]
    }

    /// Zeroes every mode above the 2/3 cutoff.
    pub fn dealias(&self, spec: &mut [Complex<T>]) {
        for (s, c) in spec.iter_mut().enumerate() {
            if !self.is_kept(s) {
                *c = Complex::new(T::zero(), T::zero());
            }
        }
    }

    /// Nodal values to normalised half spectrum.
    pub fn forward(&self, phys: &[T]) -> Vec<Complex<T>> {
        let [n1, n2, n3] = self.grid.dims();
        assert_eq!(phys.len(), self.grid.len());
        let h3 = n3 / 2 + 1;
        let zero = Complex::new(T::zero(), T::zero());
        let mut spec = vec![zero; self.grid.spectral_len()];
        let mut line = vec![T::zero(); n3];
        let mut scratch = self.r2c.make_scratch_vec();
        for l in 0..n1 * n2 {
            line.copy_from_slice(&phys[l * n3..(l + 1) * n3]);
            self.r2c
                .process_with_scratch(&mut line, &mut spec[l * h3..(l + 1) * h3], &mut scratch)
                .expect("r2c lengths are fixed by the plan");
        }
        self.axis_pass(&mut spec, true);
        let norm = T::one() / T::lit(self.grid.len() as f64);
        for c in spec.iter_mut() {
            *c = *c * norm;
        }
        spec
    }

    /// Half spectrum to nodal values.
    pub fn inverse(&self, spec: &[Complex<T>]) -> Vec<T> {
        let [n1, n2, n3] = self.grid.dims();
        assert_eq!(spec.len(), self.grid.spectral_len());
        let h3 = n3 / 2 + 1;
        let mut work = spec.to_vec();
        self.axis_pass(&mut work, false);
        let mut phys = vec![T::zero(); self.grid.len()];
        let mut scratch = self.c2r.make_scratch_vec();
        for l in 0..n1 * n2 {
            let line = &mut work[l * h3..(l + 1) * h3];
            line[0].im = T::zero();
            line[h3 - 1].im = T::zero();
            self.c2r
                .process_with_scratch(line, &mut phys[l * n3..(l + 1) * n3], &mut scratch)
                .expect("c2r input sanitised above");
        }
        phys
    }

    /// Complex FFTs along the first two axes of a half spectrum.
    fn axis_pass(&self, spec: &mut [Complex<T>], forward: bool) {
        let [n1, n2, n3] = self.grid.dims();
        let h3 = n3 / 2 + 1;
        let zero = Complex::new(T::zero(), T::zero());
        let plans = if forward { &self.fwd } else { &self.inv };

        // axis 2 (length n2), one slab per i1
        let mut buf = vec![zero; h3 * n2];
        let mut scratch = vec![zero; plans[1].get_inplace_scratch_len()];
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let row = (i1 * n2 + i2) * h3;
                for j3 in 0..h3 {
                    buf[j3 * n2 + i2] = spec[row + j3];
                }
            }
            plans[1].process_with_scratch(&mut buf, &mut scratch);
            for i2 in 0..n2 {
                let row = (i1 * n2 + i2) * h3;
                for j3 in 0..h3 {
                    spec[row + j3] = buf[j3 * n2 + i2];
                }
            }
        }

        // axis 1 (length n1), one pencil family per i2
        let mut buf = vec![zero; h3 * n1];
        let mut scratch = vec![zero; plans[0].get_inplace_scratch_len()];
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                let row = (i1 * n2 + i2) * h3;
                for j3 in 0..h3 {
                    buf[j3 * n1 + i1] = spec[row + j3];
                }
            }
            plans[0].process_with_scratch(&mut buf, &mut scratch);
            for i1 in 0..n1 {
                let row = (i1 * n2 + i2) * h3;
                for j3 in 0..h3 {
                    spec[row + j3] = buf[j3 * n1 + i1];
                }
            }
        }
    }
}

/// Tensor rank of a field. Rank-2 components are stored row-major (`3*i + j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rank {
    Scalar,
    Vector,
    Tensor,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 3,
            Rank::Tensor => 9,
        }
    }
}

/// Order `m` of the Sobolev space `H^m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SobolevIndex(pub u32);

/// A scalar, vector or rank-2 tensor field on the torus.
///
/// The spectral coefficients are authoritative; nodal values are computed
/// lazily and cached, so a `Field` is an immutable value once built.
#[derive(Clone)]
pub struct Field<T: Real> {
    torus: Arc<Torus<T>>,
    rank: Rank,
    spec: Vec<Vec<Complex<T>>>,
    phys: OnceLock<Vec<Vec<T>>>,
}

impl<T: Real> fmt::Debug for Field<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.torus.grid.dims())
            .field("rank", &self.rank)
            .field("physical_cached", &self.phys.get().is_some())
            .finish()
    }
}

impl<T: Real> Field<T> {
    pub fn from_spectral(torus: &Arc<Torus<T>>, rank: Rank, spec: Vec<Vec<Complex<T>>>) -> Result<Self> {
        let ok = spec.len() == rank.components() && spec.iter().all(|c| c.len() == torus.grid.spectral_len());
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "spectral data does not match rank {rank:?} on grid {:?}",
                torus.grid.dims()
            )));
        }
        Ok(Self { torus: torus.clone(), rank, spec, phys: OnceLock::new() })
    }

    pub fn from_physical(torus: &Arc<Torus<T>>, rank: Rank, phys: Vec<Vec<T>>) -> Result<Self> {
        let ok = phys.len() == rank.components() && phys.iter().all(|c| c.len() == torus.grid.len());
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "nodal data does not match rank {rank:?} on grid {:?}",
                torus.grid.dims()
            )));
        }
        let spec = phys.iter().map(|c| torus.forward(c)).collect();
        let cache = OnceLock::new();
        let _ = cache.set(phys);
        Ok(Self { torus: torus.clone(), rank, spec, phys: cache })
    }

    /// Samples `f` at every node; `f` returns one value per component.
    pub fn from_fn(torus: &Arc<Torus<T>>, rank: Rank, f: impl Fn([T; 3]) -> Vec<T>) -> Self {
        let grid = torus.grid;
        let nc = rank.components();
        let mut phys = vec![vec![T::zero(); grid.len()]; nc];
        for idx in 0..grid.len() {
            let vals = f(grid.node_position(idx));
            assert_eq!(vals.len(), nc, "closure returned wrong component count");
            for (c, v) in vals.into_iter().enumerate() {
                phys[c][idx] = v;
            }
        }
        Self::from_physical(torus, rank, phys).expect("shapes built from the grid")
    }

    pub fn scalar_fn(torus: &Arc<Torus<T>>, f: impl Fn([T; 3]) -> T) -> Self {
        Self::from_fn(torus, Rank::Scalar, |x| vec![f(x)])
    }

    pub fn vector_fn(torus: &Arc<Torus<T>>, f: impl Fn([T; 3]) -> [T; 3]) -> Self {
        Self::from_fn(torus, Rank::Vector, |x| f(x).to_vec())
    }

    pub fn tensor_fn(torus: &Arc<Torus<T>>, f: impl Fn([T; 3]) -> [[T; 3]; 3]) -> Self {
        Self::from_fn(torus, Rank::Tensor, |x| f(x).iter().flatten().copied().collect())
    }

    pub fn zeros(torus: &Arc<Torus<T>>, rank: Rank) -> Self {
        let zero = Complex::new(T::zero(), T::zero());
        let spec = vec![vec![zero; torus.grid.spectral_len()]; rank.components()];
        Self { torus: torus.clone(), rank, spec, phys: OnceLock::new() }
    }

    /// Spatially constant field with the given component values.
    pub fn constant(torus: &Arc<Torus<T>>, rank: Rank, values: &[T]) -> Result<Self> {
        if values.len() != rank.components() {
            return Err(Error::InvalidParameter(format!("{} values given for rank {rank:?}", values.len())));
        }
        let mut f = Self::zeros(torus, rank);
        for (c, &v) in values.iter().enumerate() {
            f.spec[c][0] = Complex::new(v, T::zero());
        }
        Ok(f)
    }

    pub fn torus(&self) -> &Arc<Torus<T>> {
        &self.torus
    }

    pub fn grid(&self) -> Grid {
        self.torus.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn spectral(&self) -> &[Vec<Complex<T>>] {
        &self.spec
    }

    pub fn into_spectral(self) -> Vec<Vec<Complex<T>>> {
        self.spec
    }

    /// Nodal values, one array per component (computed once).
    pub fn physical(&self) -> &[Vec<T>] {
        self.phys.get_or_init(|| self.spec.iter().map(|c| self.torus.inverse(c)).collect())
    }

    pub fn has_physical_cache(&self) -> bool {
        self.phys.get().is_some()
    }

    pub fn component(&self, c: usize) -> Field<T> {
        let phys = OnceLock::new();
        if let Some(p) = self.phys.get() {
            let _ = phys.set(vec![p[c].clone()]);
        }
        Field { torus: self.torus.clone(), rank: Rank::Scalar, spec: vec![self.spec[c].clone()], phys }
    }

    /// Tensor component `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> Field<T> {
        debug_assert_eq!(self.rank, Rank::Tensor);
        self.component(3 * i + j)
    }

    pub fn from_components(rank: Rank, parts: &[Field<T>]) -> Result<Self> {
        if parts.len() != rank.components() || parts.is_empty() {
            return Err(Error::InvalidParameter(format!("{} components given for rank {rank:?}", parts.len())));
        }
        for p in parts {
            parts[0].check_grid(p)?;
            p.expect_rank(Rank::Scalar)?;
        }
        let spec = parts.iter().map(|p| p.spec[0].clone()).collect();
        Self::from_spectral(&parts[0].torus, rank, spec)
    }

    pub fn check_grid(&self, other: &Field<T>) -> Result<()> {
        if self.torus.grid != other.torus.grid {
            return Err(Error::GridMismatch { left: self.torus.grid.dims(), right: other.torus.grid.dims() });
        }
        Ok(())
    }

    pub fn expect_rank(&self, rank: Rank) -> Result<()> {
        if self.rank != rank {
            return Err(Error::RankMismatch { expected: rank, found: self.rank });
        }
        Ok(())
    }

    /// New field with `f(slot, coefficient)` applied to every coefficient.
    pub fn map_spectral(&self, f: impl Fn(usize, Complex<T>) -> Complex<T>) -> Field<T> {
        let spec = self.spec.iter().map(|c| c.iter().enumerate().map(|(s, &v)| f(s, v)).collect()).collect();
        Field { torus: self.torus.clone(), rank: self.rank, spec, phys: OnceLock::new() }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: T, other: &Field<T>, b: T) -> Result<Field<T>> {
        self.check_grid(other)?;
        other.expect_rank(self.rank)?;
        let spec = self
            .spec
            .iter()
            .zip(&other.spec)
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * a + q * b).collect())
            .collect();
        Ok(Field { torus: self.torus.clone(), rank: self.rank, spec, phys: OnceLock::new() })
    }

    pub fn add(&self, other: &Field<T>) -> Result<Field<T>> {
        self.lincomb(T::one(), other, T::one())
    }

    pub fn sub(&self, other: &Field<T>) -> Result<Field<T>> {
        self.lincomb(T::one(), other, -T::one())
    }

    pub fn scale(&self, a: T) -> Field<T> {
        self.map_spectral(|_, c| c * a)
    }

    /// Spatial mean of each component.
    pub fn mean(&self) -> Vec<T> {
        self.spec.iter().map(|c| c[0].re).collect()
    }

    /// `<f, g>` summed over components, via Parseval.
    pub fn inner(&self, other: &Field<T>) -> Result<T> {
        self.check_grid(other)?;
        other.expect_rank(self.rank)?;
        let mut acc = T::zero();
        for (x, y) in self.spec.iter().zip(&other.spec) {
            for (s, (p, q)) in x.iter().zip(y).enumerate() {
                acc = acc + self.torus.parseval_weight(s) * (p.re * q.re + p.im * q.im);
            }
        }
        Ok(acc)
    }

    pub fn l2_norm_squared(&self) -> T {
        let mut acc = T::zero();
        for c in &self.spec {
            for (s, v) in c.iter().enumerate() {
                acc = acc + self.torus.parseval_weight(s) * v.norm_sqr();
            }
        }
        acc
    }

    pub fn l2_norm(&self) -> T {
        self.l2_norm_squared().sqrt()
    }

    /// Largest nodal magnitude over all components.
    pub fn max_abs(&self) -> T {
        self.physical().iter().flat_map(|c| c.iter()).fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.spec.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Drops every mode above the 2/3 cutoff.
    pub fn dealiased(&self) -> Field<T> {
        let torus = self.torus.clone();
        self.map_spectral(|s, c| if torus.is_kept(s) { c } else { Complex::new(T::zero(), T::zero()) })
    }

    pub fn transpose(&self) -> Result<Field<T>> {
        self.expect_rank(Rank::Tensor)?;
        let mut spec = self.spec.clone();
        for i in 0..3 {
            for j in 0..3 {
                spec[3 * i + j] = self.spec[3 * j + i].clone();
            }
        }
        Field::from_spectral(&self.torus, Rank::Tensor, spec)
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Result<Field<T>> {
        let t = self.transpose()?;
        self.lincomb(T::lit(0.5), &t, T::lit(0.5))
    }

    /// Largest nodal `|A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> Result<T> {
        self.expect_rank(Rank::Tensor)?;
        let p = self.physical();
        let mut worst = T::zero();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            for (a, b) in p[3 * i + j].iter().zip(&p[3 * j + i]) {
                worst = worst.max((*a - *b).abs());
            }
        }
        Ok(worst)
    }
}

/// Spectral derivative along `axis` (0, 1, 2 for x¹, x², x³).
///
/// The Nyquist mode is dropped so real input stays real.
pub fn derivative<T: Real>(f: &Field<T>, axis: usize) -> Field<T> {
    assert!(axis < 3, "axis must be 0, 1 or 2");
    let torus = f.torus.clone();
    let grid = torus.grid;
    f.map_spectral(|s, c| {
        let k = torus.derivative_symbol(axis, grid.mode_coords(s)[axis]);
        Complex::new(-c.im * k, c.re * k)
    })
}

/// Pointwise product of two scalar fields, truncated by the 2/3 rule.
pub fn dealiased_product<T: Real>(f: &Field<T>, g: &Field<T>) -> Result<Field<T>> {
    f.check_grid(g)?;
    f.expect_rank(Rank::Scalar)?;
    g.expect_rank(Rank::Scalar)?;
    let torus = f.torus.clone();
    let prod: Vec<T> = f.physical()[0].iter().zip(&g.physical()[0]).map(|(a, b)| *a * *b).collect();
    let mut spec = torus.forward(&prod);
    torus.dealias(&mut spec);
    Field::from_spectral(&torus, Rank::Scalar, vec![spec])
}

/// `sum_{|lambda| <= m} prod_a kappa_a^(2 lambda_a)` for squared symbols `sq`.
fn sobolev_weight<T: Real>(sq: [T; 3], m: u32) -> T {
    let mut total = T::zero();
    let mut pa = T::one();
    for a in 0..=m {
        let mut pb = T::one();
        for b in 0..=(m - a) {
            let mut pc = T::one();
            for _ in 0..=(m - a - b) {
                total = total + pa * pb * pc;
                pc = pc * sq[2];
            }
            pb = pb * sq[1];
        }
        pa = pa * sq[0];
    }
    total
}

/// `(sum_{|lambda| <= m} ||D^lambda f||^2)^(1/2)`, summed over components.
pub fn sobolev_norm<T: Real>(f: &Field<T>, m: SobolevIndex) -> T {
    let torus = &f.torus;
    let mut acc = T::zero();
    for s in 0..torus.grid.spectral_len() {
        let k = torus.derivative_vector(s);
        let w = torus.parseval_weight(s) * sobolev_weight([k[0] * k[0], k[1] * k[1], k[2] * k[2]], m.0);
        for c in &f.spec {
            acc = acc + w * c[s].norm_sqr();
        }
    }
    acc.sqrt()
}

/// Removes the mean of every component.
pub fn project_mean_zero<T: Real>(f: &Field<T>) -> Field<T> {
    f.map_spectral(|s, c| if s == 0 { Complex::new(T::zero(), T::zero()) } else { c })
}

/// Leray projection of a vector field onto divergence-free fields.
pub fn project_solenoidal<T: Real>(f: &Field<T>) -> Result<Field<T>> {
    f.expect_rank(Rank::Vector)?;
    let torus = f.torus.clone();
    let mut spec = f.spec.clone();
    for s in 0..torus.grid.spectral_len() {
        let k = torus.derivative_vector(s);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == T::zero() {
            continue;
        }
        let dot = spec[0][s] * k[0] + spec[1][s] * k[1] + spec[2][s] * k[2];
        for a in 0..3 {
            spec[a][s] = spec[a][s] - dot * (k[a] / k2);
        }
    }
    Field::from_spectral(&torus, Rank::Vector, spec)
}

/// Deterministic random divergence-free, mean-zero vector field.
///
/// Modes with `|k_a| <= kmax` on every axis are filled with seeded random
/// coefficients damped by `1/(1+|k|^2)`, projected onto solenoidal fields and
/// rescaled so that the L² norm equals `amp`.
pub fn random_divfree<T: Real>(torus: &Arc<Torus<T>>, seed: u64, kmax: usize, amp: T) -> Result<Field<T>> {
    let grid = torus.grid;
    let limit = (0..3).map(|a| (grid.dims()[a] - 1) / 3).min().unwrap_or(0);
    if kmax == 0 || 3 * kmax >= grid.dims().into_iter().min().unwrap_or(0) {
        return Err(Error::KmaxTooLarge { kmax, limit });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = Complex::new(T::zero(), T::zero());
    let mut spec = vec![vec![zero; grid.spectral_len()]; 3];
    for s in 1..grid.spectral_len() {
        let k = grid.mode_wavevector(s);
        if k.iter().any(|&x| x.unsigned_abs() as usize > kmax) {
            continue;
        }
        let damp = 1.0 / (1.0 + (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
        for comp in spec.iter_mut() {
            let re: f64 = rng.gen_range(-1.0..1.0);
            let im: f64 = rng.gen_range(-1.0..1.0);
            comp[s] = Complex::new(T::lit(re * damp), T::lit(im * damp));
        }
    }
    // A round trip through nodal values keeps the Hermitian part only.
    let phys: Vec<Vec<T>> = spec.iter().map(|c| torus.inverse(c)).collect();
    let f = Field::from_physical(torus, Rank::Vector, phys)?;
    let f = project_mean_zero(&project_solenoidal(&f)?);
    let norm = f.l2_norm();
    if norm == T::zero() {
        return Err(Error::InvalidParameter("random field vanished".into()));
    }
    Ok(f.scale(amp / norm))
}

/// Deterministic random scalar field band-limited to `|k_a| <= kmax`, unit L² norm.
pub fn random_scalar<T: Real>(torus: &Arc<Torus<T>>, seed: u64, kmax: usize) -> Result<Field<T>> {
    let grid = torus.grid;
    if kmax == 0 || 2 * kmax >= grid.dims().into_iter().min().unwrap_or(0) {
        return Err(Error::KmaxTooLarge { kmax, limit: grid.dims()[0] / 2 - 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = Complex::new(T::zero(), T::zero());
    let mut spec = vec![zero; grid.spectral_len()];
    for (s, slot) in spec.iter_mut().enumerate() {
        let k = grid.mode_wavevector(s);
        if k.iter().any(|&x| x.unsigned_abs() as usize > kmax) {
            continue;
        }
        let re: f64 = rng.gen_range(-1.0..1.0);
        let im: f64 = rng.gen_range(-1.0..1.0);
        *slot = Complex::new(T::lit(re), T::lit(im));
    }
    let f = Field::from_physical(torus, Rank::Scalar, vec![torus.inverse(&spec)])?;
    let norm = f.l2_norm();
    Ok(f.scale(T::one() / norm))
}
