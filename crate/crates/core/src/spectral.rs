//! Fourier grid on the torus (-π, π) and the diagonal-in-frequency operators
//! used by every scheme.
//!
//! Coefficients follow the convention `û_k = (1/N) Σ_j u(x_j) e^{-ik x_j}` with
//! `x_j = -π + 2πj/N`, so that `u(x_j) = Σ_k û_k e^{ik x_j}` for
//! `k ∈ [-N/2, N/2 - 1]`. Storage uses the FFT's natural ordering; everything
//! outside this module addresses modes by their signed wavenumber.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `φ₁(z) = (e^z - 1)/z` with `φ₁(0) = 1`.
///
/// A four-term Taylor expansion is used for `|z| < 1e-4`.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        exp_m1(z) / z
    }
}

/// `e^z - 1` without cancellation for small `|z|`.
fn exp_m1(z: Complex64) -> Complex64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    Complex64::new(z.re.exp_m1() * c - 2.0 * half * half, z.re.exp() * s)
}

/// Multiplier of `𝒟_τ = (e^{iτ∂²} - 1)(iτ∂²)^{-1}` at wavenumber `k`.
///
/// Also valid for negative `tau`, which gives `𝒟_{-|τ|}`.
pub fn dtau_multiplier(k: f64, tau: f64) -> Complex64 {
    phi1(Complex64::new(0.0, -tau * k * k))
}

struct GridInner {
    n_modes: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // signed wavenumber of each storage slot
    wavenumbers: Vec<f64>,
}

/// Uniform periodic grid with `n_modes` points on (-π, π).
///
/// Cloning is cheap; FFT plans are shared.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_modes", &self.inner.n_modes)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n_modes == other.inner.n_modes
    }
}

impl Eq for Grid {}

impl Grid {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes < 4 || !n_modes.is_multiple_of(2) {
            return Err(Error::InvalidGridSize(n_modes));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_modes);
        let inverse = planner.plan_fft_inverse(n_modes);
        let wavenumbers = (0..n_modes).map(|i| slot_to_k(i, n_modes) as f64).collect();
        Ok(Self {
            inner: Arc::new(GridInner {
                n_modes,
                forward,
                inverse,
                wavenumbers,
            }),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.inner.n_modes
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.inner.n_modes as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.inner.n_modes).map(|j| -PI + j as f64 * h).collect()
    }

    /// Smallest representable wavenumber, `-N/2`.
    pub fn k_min(&self) -> i64 {
        -(self.inner.n_modes as i64 / 2)
    }

    /// Largest representable wavenumber, `N/2 - 1`.
    pub fn k_max(&self) -> i64 {
        self.inner.n_modes as i64 / 2 - 1
    }

    pub fn contains(&self, k: i64) -> bool {
        k >= self.k_min() && k <= self.k_max()
    }

    pub(crate) fn slot(&self, k: i64) -> usize {
        k.rem_euclid(self.inner.n_modes as i64) as usize
    }

    /// Signed wavenumbers in storage order.
    pub(crate) fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    /// Builds the storage-order multiplier `m(k)`.
    pub(crate) fn multiplier(&self, m: impl Fn(f64) -> Complex64) -> Vec<Complex64> {
        self.inner.wavenumbers.iter().map(|&k| m(k)).collect()
    }

    /// Physical values to coefficients, in place.
    pub(crate) fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.inner.forward.process(buf);
        let scale = 1.0 / self.inner.n_modes as f64;
        // e^{-ik x_j} = (-1)^k e^{-2πijk/N}
        for (i, c) in buf.iter_mut().enumerate() {
            *c *= if i % 2 == 0 { scale } else { -scale };
        }
    }

    /// Coefficients to physical values, in place.
    pub(crate) fn inverse_in_place(&self, buf: &mut [Complex64]) {
        for c in buf.iter_mut().skip(1).step_by(2) {
            *c = -*c;
        }
        self.inner.inverse.process(buf);
    }
}

fn slot_to_k(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

pub fn make_grid(n_modes: usize) -> Result<Grid> {
    Grid::new(n_modes)
}

/// A complex function on the torus held by its Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    // natural FFT ordering
    pub(crate) coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n_modes()],
        }
    }

    /// Field with `û_k = coeff(k)` for every representable `k`.
    pub fn from_fn(grid: &Grid, coeff: impl Fn(i64) -> Complex64) -> Self {
        let n = grid.n_modes();
        let coeffs = (0..n).map(|i| coeff(slot_to_k(i, n))).collect();
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub(crate) fn from_storage(grid: &Grid, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.n_modes());
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub fn to_spectral(grid: &Grid, values: &[Complex64]) -> Result<Self> {
        if values.len() != grid.n_modes() {
            return Err(Error::LengthMismatch {
                expected: grid.n_modes(),
                actual: values.len(),
            });
        }
        let mut buf = values.to_vec();
        grid.forward_in_place(&mut buf);
        Ok(Self::from_storage(grid, buf))
    }

    pub fn from_real(grid: &Grid, values: &[f64]) -> Result<Self> {
        let values: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::to_spectral(grid, &values)
    }

    /// Samples `f` on the grid and transforms.
    pub fn from_physical_fn(grid: &Grid, f: impl Fn(f64) -> Complex64) -> Self {
        let values: Vec<Complex64> = grid.points().into_iter().map(f).collect();
        let mut buf = values;
        grid.forward_in_place(&mut buf);
        Self::from_storage(grid, buf)
    }

    pub fn to_physical(&self) -> Vec<Complex64> {
        let mut buf = self.coeffs.clone();
        self.grid.inverse_in_place(&mut buf);
        buf
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.grid.n_modes()
    }

    /// Coefficient at wavenumber `k`; zero outside the grid's range.
    pub fn coeff(&self, k: i64) -> Complex64 {
        if self.grid.contains(k) {
            self.coeffs[self.grid.slot(k)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// # Panics
    /// If `k` is not representable on the grid.
    pub fn set_coeff(&mut self, k: i64, value: Complex64) {
        assert!(self.grid.contains(k), "wavenumber {k} outside grid");
        let slot = self.grid.slot(k);
        self.coeffs[slot] = value;
    }

    /// `(k, û_k)` in ascending `k`.
    pub fn modes(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        (self.grid.k_min()..=self.grid.k_max()).map(move |k| (k, self.coeffs[self.grid.slot(k)]))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Enforces `û_{-k} = conj(û_k)` and a real `û_{-N/2}`, i.e. projects onto
    /// real-valued grid functions.
    pub fn hermitian_symmetrized(&self) -> Self {
        Self::from_fn(&self.grid, |k| {
            if k == self.grid.k_min() {
                Complex64::new(self.coeff(k).re, 0.0)
            } else {
                (self.coeff(k) + self.coeff(-k).conj()) / 2.0
            }
        })
    }

    fn check_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.n_modes(),
                right: other.n_modes(),
            });
        }
        Ok(())
    }

    fn map_with_k(&self, m: impl Fn(f64, Complex64) -> Complex64) -> Self {
        let coeffs = self
            .grid
            .wavenumbers()
            .iter()
            .zip(&self.coeffs)
            .map(|(&k, &c)| m(k, c))
            .collect();
        Self::from_storage(&self.grid, coeffs)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        self.map_with_k(|_, c| c * factor)
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.check_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self::from_storage(&self.grid, coeffs))
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.check_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Self::from_storage(&self.grid, coeffs))
    }

    /// `e^{it∂²}`: multiplies `û_k` by `e^{-ik²t}`.
    pub fn free_propagate(&self, t: f64) -> Self {
        self.map_with_k(|k, c| c * Complex64::from_polar(1.0, -k * k * t))
    }

    /// `𝒟_τ = (e^{iτ∂²} - 1)(iτ∂²)^{-1}`, the time average of the free flow over `[0, τ]`.
    pub fn apply_dtau(&self, tau: f64) -> Self {
        self.map_with_k(|k, c| c * dtau_multiplier(k, tau))
    }

    /// `P_{≤N}`: keeps `|k| ≤ cutoff`.
    pub fn project_low(&self, cutoff: f64) -> Self {
        self.map_with_k(|k, c| if k.abs() <= cutoff { c } else { Complex64::new(0.0, 0.0) })
    }

    /// `J^s = (1 - ∂²)^{s/2}`.
    pub fn apply_js(&self, s: f64) -> Self {
        self.map_with_k(|k, c| c * (1.0 + k * k).powf(s / 2.0))
    }

    /// `∂_x^{-1}`, with the zero mode sent to zero.
    pub fn inverse_dx(&self) -> Self {
        self.map_with_k(|k, c| if k == 0.0 { Complex64::new(0.0, 0.0) } else { c / (I * k) })
    }

    pub fn derivative(&self) -> Self {
        self.map_with_k(|k, c| c * I * k)
    }

    /// `‖f‖_{H^s} = √(2π) (Σ ⟨k⟩^{2s} |û_k|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let sum: f64 = self
            .grid
            .wavenumbers()
            .iter()
            .zip(&self.coeffs)
            .map(|(&k, c)| (1.0 + k * k).powf(s) * c.norm_sqr())
            .sum();
        (2.0 * PI * sum).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        let sum: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        (2.0 * PI * sum).sqrt()
    }

    /// `⟨f, g⟩ = Re ∫ f conj(g) dx`.
    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.check_grid(other)?;
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        Ok(2.0 * PI * sum)
    }

    /// Pointwise product on the collocation grid (aliasing is not removed).
    pub fn mul_physical(&self, other: &SpectralField) -> Result<Self> {
        self.check_grid(other)?;
        let mut a = self.to_physical();
        let b = other.to_physical();
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= y;
        }
        self.grid.forward_in_place(&mut a);
        Ok(Self::from_storage(&self.grid, a))
    }

    /// Pointwise product evaluated on a 3/2-padded grid and truncated back.
    pub fn mul_physical_dealiased(&self, other: &SpectralField) -> Result<Self> {
        self.check_grid(other)?;
        let padded_n = 3 * self.n_modes() / 2;
        let padded_n = padded_n + padded_n % 2;
        let padded = Grid::new(padded_n)?;
        let a = SpectralField::from_fn(&padded, |k| self.coeff(k)).to_physical();
        let b = SpectralField::from_fn(&padded, |k| other.coeff(k)).to_physical();
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let product = SpectralField::to_spectral(&padded, &prod)?;
        Ok(SpectralField::from_fn(&self.grid, |k| product.coeff(k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plane_wave(grid: &Grid, k: i64) -> SpectralField {
        SpectralField::from_fn(grid, |m| if m == k { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    fn pseudo_random(grid: &Grid, seed: u64) -> SpectralField {
        // small LCG, test-only
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let values: Vec<Complex64> = (0..grid.n_modes()).map(|_| c(next(), next())).collect();
        SpectralField::to_spectral(grid, &values).unwrap()
    }

    #[test]
    fn grid_points_and_validation() {
        let g = Grid::new(4).unwrap();
        let pts = g.points();
        let expect = [-PI, -PI / 2.0, 0.0, PI / 2.0];
        for (p, e) in pts.iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
        let g = Grid::new(1024).unwrap();
        assert_eq!(g.points().len(), 1024);
        assert!((g.spacing() - 2.0 * PI / 1024.0).abs() < 1e-16);
        assert!(matches!(Grid::new(5), Err(Error::InvalidGridSize(5))));
        assert!(Grid::new(2).is_err());
    }

    #[test]
    fn transform_conventions() {
        let g = Grid::new(16).unwrap();
        let f = SpectralField::to_spectral(&g, &vec![c(2.5, -1.0); 16]).unwrap();
        for (k, v) in f.modes() {
            let expect = if k == 0 { c(2.5, -1.0) } else { c(0.0, 0.0) };
            assert!((v - expect).norm() < 1e-14, "k={k}");
        }
        let f = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.0, x));
        for (k, v) in f.modes() {
            let expect = if k == 1 { 1.0 } else { 0.0 };
            assert!((v - expect).norm() < 1e-14, "k={k}");
        }
        // the most negative mode
        let f = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.0, -8.0 * x));
        assert!((f.coeff(-8) - 1.0).norm() < 1e-13);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = Grid::new(8).unwrap();
        let err = SpectralField::to_spectral(&g, &[c(0.0, 0.0); 7]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 8, actual: 7 }));
    }

    #[test]
    fn round_trip_random() {
        let g = Grid::new(64).unwrap();
        let values: Vec<Complex64> = pseudo_random(&g, 3).to_physical();
        let back = SpectralField::to_spectral(&g, &values).unwrap().to_physical();
        let err: f64 = values.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = values.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-12);
    }

    #[test]
    fn free_propagation_phases() {
        let g = Grid::new(16).unwrap();
        let out = plane_wave(&g, 1).free_propagate(PI);
        assert!((out.coeff(1) - c(-1.0, 0.0)).norm() < 1e-14);
        let out = plane_wave(&g, 2).free_propagate(PI / 4.0);
        assert!((out.coeff(2) - c(-1.0, 0.0)).norm() < 1e-14);
        let out = plane_wave(&g, 0).free_propagate(3.7);
        assert_eq!(out.coeff(0), c(1.0, 0.0));
    }

    #[test]
    fn dtau_closed_forms() {
        assert_eq!(dtau_multiplier(0.0, 0.3), c(1.0, 0.0));
        let m = dtau_multiplier(1.0, PI);
        assert!((m - c(0.0, -2.0 / PI)).norm() < 1e-14);
    }

    #[test]
    fn dtau_matches_trapezoid_average() {
        // (1/τ)∫₀^τ e^{-isk²} ds with 10⁴ trapezoid panels
        let (k, tau) = (3.0_f64, 0.01_f64);
        let n = 10_000;
        let h = tau / n as f64;
        let mut sum = Complex64::new(0.0, 0.0);
        for j in 0..=n {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            sum += w * Complex64::from_polar(1.0, -(j as f64) * h * k * k);
        }
        let quad = sum * h / tau;
        assert!((quad - dtau_multiplier(k, tau)).norm() < 1e-10);
    }

    #[test]
    fn phi1_branches_agree_near_switch() {
        for &r in &[0.99e-4, 1.01e-4] {
            for &arg in &[0.0, 1.0, 2.5] {
                let z = Complex64::from_polar(r, arg);
                // ten-term series as reference
                let mut term = Complex64::new(1.0, 0.0);
                let mut series = term;
                for n in 2..12 {
                    term *= z / n as f64;
                    series += term;
                }
                assert!((phi1(z) - series).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let g = Grid::new(16).unwrap();
        let ones = SpectralField::from_fn(&g, |_| c(1.0, 0.0));
        assert_eq!(ones.project_low(8.0), ones);
        let dc = ones.project_low(0.0);
        for (k, v) in dc.modes() {
            assert_eq!(v.re, if k == 0 { 1.0 } else { 0.0 });
        }
        let band = ones.project_low(2.0);
        let kept: Vec<i64> = band.modes().filter(|(_, v)| v.norm() > 0.0).map(|(k, _)| k).collect();
        assert_eq!(kept, vec![-2, -1, 0, 1, 2]);
    }

    #[test]
    fn bessel_potential_operator() {
        let g = Grid::new(16).unwrap();
        let f = pseudo_random(&g, 9);
        assert_eq!(f.apply_js(0.0), f);
        assert!((plane_wave(&g, 1).apply_js(2.0).coeff(1) - 2.0).norm() < 1e-14);
        let back = f.apply_js(1.3).apply_js(-1.3);
        assert!(back.sub(&f).unwrap().l2_norm() < 1e-12 * f.l2_norm());
    }

    #[test]
    fn inverse_derivative() {
        let g = Grid::new(32).unwrap();
        assert!((plane_wave(&g, 1).inverse_dx().coeff(1) - c(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(plane_wave(&g, 0).inverse_dx().max_abs_coeff(), 0.0);
        let f = pseudo_random(&g, 5);
        let mean = f.coeff(0);
        let recovered = f.inverse_dx().derivative();
        for (k, v) in recovered.modes() {
            let expect = if k == 0 { f.coeff(0) - mean } else { f.coeff(k) };
            assert!((v - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = Grid::new(32).unwrap();
        let constant = SpectralField::to_spectral(&g, &vec![c(0.0, 3.0); 32]).unwrap();
        assert!((constant.sobolev_norm(0.0) - (2.0 * PI).sqrt() * 3.0).abs() < 1e-12);
        let w = plane_wave(&g, 1);
        assert!((w.sobolev_norm(1.0) - (2.0 * PI).sqrt() * 2f64.sqrt()).abs() < 1e-12);

        let f = pseudo_random(&g, 11);
        let vals = f.to_physical();
        let quad: f64 = vals.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.spacing();
        assert!((f.sobolev_norm(0.0).powi(2) - quad).abs() < 1e-10 * quad);
    }

    #[test]
    fn products() {
        let g = Grid::new(16).unwrap();
        let f = pseudo_random(&g, 2);
        let one = SpectralField::to_spectral(&g, &vec![c(1.0, 0.0); 16]).unwrap();
        assert!(f.mul_physical(&one).unwrap().sub(&f).unwrap().l2_norm() < 1e-13);

        let w = plane_wave(&g, 1);
        let sq = w.mul_physical(&w).unwrap();
        assert!((sq.coeff(2) - 1.0).norm() < 1e-14);

        // band-limited convolution oracle
        let g = Grid::new(32).unwrap();
        let a = pseudo_random(&g, 4).project_low(5.0);
        let b = pseudo_random(&g, 8).project_low(6.0);
        let prod = a.mul_physical(&b).unwrap();
        for k in -11..=11i64 {
            let mut direct = Complex64::new(0.0, 0.0);
            for k1 in -5..=5i64 {
                direct += a.coeff(k1) * b.coeff(k - k1);
            }
            assert!((prod.coeff(k) - direct).norm() < 1e-12, "k={k}");
        }

        let other = Grid::new(8).unwrap();
        assert!(matches!(
            f.mul_physical(&SpectralField::zeros(&other)),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn dealiased_product_drops_aliased_modes() {
        let g = Grid::new(8).unwrap();
        let w = plane_wave(&g, 3);
        // e^{6ix} aliases onto k = -2 on an 8-point grid
        let aliased = w.mul_physical(&w).unwrap();
        assert!((aliased.coeff(-2) - 1.0).norm() < 1e-13);
        let clean = w.mul_physical_dealiased(&w).unwrap();
        assert!(clean.max_abs_coeff() < 1e-13);
    }

    #[test]
    fn hermitian_fields_are_real() {
        let g = Grid::new(64).unwrap();
        let f = pseudo_random(&g, 21).hermitian_symmetrized();
        let max_im = f.to_physical().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        assert!(max_im < 1e-12);
    }
}
