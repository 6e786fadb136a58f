//! Diagnostics: conserved quantities, error metrics, decay and order fits,
//! the time-average product bound, and the second Picard iterate `A₂`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{gamma_p, gen_illposed_potential, IllPosedVariant, Potential};
use crate::spectral::{phi1, Grid, SpectralField};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `(1/2π) ∫ |u|² dx`, evaluated as `Σ |û_k|²`.
pub fn mass(u: &SpectralField) -> f64 {
    u.modes().map(|(_, c)| c.norm_sqr()).sum()
}

/// `∫ |∂u|² - ξ|u|² + (λ/2)|u|⁴ dx`.
pub fn energy(u: &SpectralField, xi: &Potential, lambda: f64) -> Result<f64> {
    if u.grid() != xi.grid() {
        return Err(Error::GridMismatch {
            left: u.n_modes(),
            right: xi.grid().n_modes(),
        });
    }
    let kinetic: f64 = 2.0 * PI * u.modes().map(|(k, c)| (k * k) as f64 * c.norm_sqr()).sum::<f64>();
    let h = u.grid().spacing();
    let local: f64 = u
        .to_physical()
        .iter()
        .zip(xi.values())
        .map(|(v, x)| {
            let rho = v.norm_sqr();
            -x * rho + 0.5 * lambda * rho * rho
        })
        .sum();
    Ok(kinetic + h * local)
}

/// `‖u - ref‖_{L²} / ‖ref‖_{L²}`.
pub fn relative_l2_error(u: &SpectralField, reference: &SpectralField) -> Result<f64> {
    let diff = u.sub(reference)?;
    let norm = reference.l2_norm();
    if norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(diff.l2_norm() / norm)
}

/// Least-squares fit of `log|û_k|` against `log k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub fitted_exponent: f64,
    pub k_window: [usize; 2],
    /// RMS of the fit residual in natural-log units.
    pub residual: f64,
    /// Some bins in the window sat at roundoff level and were dropped.
    pub floor_detected: bool,
}

/// Default fit window `[8, n/8]`.
pub fn default_decay_window(grid: &Grid) -> [usize; 2] {
    [8, grid.n_modes() / 8]
}

pub fn decay_slope(f: &SpectralField, k_min: usize, k_max: usize) -> Result<DecayFit> {
    let limit = f.grid().k_max() as usize;
    if k_min < 2 || k_min >= k_max || k_max > limit {
        return Err(Error::param(
            "k_window",
            format!("need 2 <= k_min < k_max <= {limit}, got [{k_min}, {k_max}]"),
        ));
    }
    let floor = 1e-13 * f.max_abs_coeff();
    let mut floor_detected = false;
    let mut bins = Vec::new();
    for k in k_min..=k_max {
        let k = k as i64;
        let amp = 0.5 * (f.coeff(k).norm() + f.coeff(-k).norm());
        if !(amp >= floor) || amp == 0.0 {
            floor_detected = true;
            continue;
        }
        bins.push((k, amp));
    }
    // divide out a power of two so that binary rescalings of f fit identically
    let top = bins.iter().map(|b| b.1).fold(0.0, f64::max);
    let scale = binary_scale(top);
    let xs: Vec<f64> = bins.iter().map(|&(k, _)| (k as f64).ln()).collect();
    let ys: Vec<f64> = bins.iter().map(|&(_, amp)| (amp * scale).ln()).collect();
    if xs.len() < 8 {
        return Err(Error::InsufficientBins(xs.len()));
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(DecayFit {
        fitted_exponent: slope,
        k_window: [k_min, k_max],
        residual,
        floor_detected,
    })
}

/// `2^{-e}` with `e` the binary exponent of a positive normal `x`.
fn binary_scale(x: f64) -> f64 {
    if !(x.is_normal() && x > 0.0) {
        return 1.0;
    }
    let e = ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    2f64.powi(-e)
}

/// Slope and intercept of the least-squares line through `(x, y)`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Pearson correlation of two samples.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    /// Least-squares slope of `log e` against `log τ`.
    pub order: f64,
    /// `log₂(e_i/e_{i+1}) / log₂(τ_i/τ_{i+1})` for consecutive pairs.
    pub pairwise: Vec<f64>,
}

pub fn convergence_order(taus: &[f64], errors: &[f64]) -> Result<ConvergenceFit> {
    if taus.len() != errors.len() {
        return Err(Error::LengthMismatch {
            expected: taus.len(),
            actual: errors.len(),
        });
    }
    if taus.len() < 3 {
        return Err(Error::param("taus", "need at least three step sizes"));
    }
    if errors.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::param("errors", "errors must be positive and finite"));
    }
    if taus.iter().any(|t| !(*t > 0.0)) || taus.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::NonMonotoneSteps);
    }
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (order, _) = least_squares(&xs, &ys);
    let pairwise = taus
        .windows(2)
        .zip(errors.windows(2))
        .map(|(t, e)| (e[0] / e[1]).log2() / (t[0] / t[1]).log2())
        .collect();
    Ok(ConvergenceFit { order, pairwise })
}

/// `M_τ(e^{isγ}) = (1/τ)∫₀^τ e^{isγ} ds = (e^{iτγ} - 1)/(iτγ)`.
pub fn time_average_exp(tau: f64, gamma: f64) -> Complex64 {
    phi1(Complex64::new(0.0, tau * gamma))
}

/// `|M_τ(e^{is(α+β)}) - M_τ(e^{isα}) M_τ(e^{isβ})|`.
pub fn average_split_defect(alpha: f64, beta: f64, tau: f64) -> f64 {
    (time_average_exp(tau, alpha + beta) - time_average_exp(tau, alpha) * time_average_exp(tau, beta)).norm()
}

/// `4 min{|α/β|, |β/α|, τ|α|, τ|β|}`.
pub fn average_split_bound(alpha: f64, beta: f64, tau: f64) -> f64 {
    let (a, b) = (alpha.abs(), beta.abs());
    4.0 * (a / b).min(b / a).min(tau * a).min(tau * b)
}

/// `∫₀^t e^{iρφ} dρ`.
fn phase_integral(t: f64, phi: f64) -> Complex64 {
    t * phi1(Complex64::new(0.0, t * phi))
}

/// Fourier coefficients of the second Picard iterate
///
/// `A₂(f) = i ∫₀^t e^{-iρ∂²}(ξ e^{iρ∂²}f + |e^{iρ∂²}f|² e^{iρ∂²}f) dρ`
///
/// for `|k| ≤ kmax`, on the grid of `f`. Time integrals are taken in closed
/// form. Sums run over the nonzero modes of `f`, so sparse data is cheap; the
/// cubic part costs `O(s³)` for `s` nonzero modes. `ξ` may live on a larger
/// grid than `f`; coefficients outside its grid count as zero.
pub fn second_iterate_a2(f: &SpectralField, xi: &Potential, t: f64, kmax: usize) -> Result<SpectralField> {
    let grid = f.grid();
    let limit = grid.k_max() as usize;
    if kmax > limit {
        return Err(Error::KmaxOutOfRange { kmax, limit });
    }
    if !t.is_finite() {
        return Err(Error::param("t", "must be finite"));
    }
    let support: Vec<(i64, Complex64)> = f.modes().filter(|(_, c)| *c != Complex64::new(0.0, 0.0)).collect();
    let kmax = kmax as i64;
    let it = I * t;
    let xi0 = xi.coeff(0);

    let linear: Vec<Complex64> = (-kmax..=kmax)
        .into_par_iter()
        .map(|k| {
            let mut acc = it * xi0 * f.coeff(k) + it * xi.coeff(2 * k) * f.coeff(-k);
            if k == 0 {
                acc -= it * xi0 * f.coeff(0);
            }
            for &(k2, fk2) in &support {
                let delta = k * k - k2 * k2;
                if delta != 0 {
                    acc += I * phase_integral(t, delta as f64) * xi.coeff(k - k2) * fk2;
                }
            }
            acc
        })
        .collect();

    let mut out = SpectralField::zeros(grid);
    for (k, value) in (-kmax..=kmax).zip(linear) {
        out.set_coeff(k, value);
    }
    // (f̄)^_{k₁} = conj(f̂_{-k₁}): run over a = -k₁, b = k₂, c = k₃ in supp f
    for &(a, fa) in &support {
        for &(b, fb) in &support {
            for &(c, fc) in &support {
                let k = b + c - a;
                if k.abs() > kmax {
                    continue;
                }
                let phi = (k * k + a * a - b * b - c * c) as f64;
                let term = I * phase_integral(t, phi) * fa.conj() * fb * fc;
                out.set_coeff(k, out.coeff(k) + term);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IllposedFamily {
    /// `ξ ∈ b̂^{s,∞}`, data `ε`, norm `H^{s+3/2}`.
    #[serde(rename = "THM3_PINF")]
    Thm3Pinf,
    /// `ξ ∈ b̂^{s,p}` with log weight, norm `H^{s+3/2+1/p}`.
    #[serde(rename = "THM3_FINP")]
    Thm3Finp,
    /// `ξ ∈ H^s`, norm `H^{s+γ}` with `γ > 2`.
    #[serde(rename = "THM4_HS")]
    Thm4Hs,
    /// `ξ̂_k = ln|k|`, data localized at `N`, norm `H^γ`.
    #[serde(rename = "THM5_LOGGROW")]
    Thm5LogGrow,
}

impl IllposedFamily {
    pub fn name(self) -> &'static str {
        match self {
            IllposedFamily::Thm3Pinf => "THM3_PINF",
            IllposedFamily::Thm3Finp => "THM3_FINP",
            IllposedFamily::Thm4Hs => "THM4_HS",
            IllposedFamily::Thm5LogGrow => "THM5_LOGGROW",
        }
    }

    /// Name of the swept parameter.
    pub fn sweep_parameter(self) -> &'static str {
        match self {
            IllposedFamily::Thm5LogGrow => "n_loc",
            _ => "m1",
        }
    }
}

/// Initial datum used by the `ε`-data families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllposedData {
    /// `u₀ = ε`
    Constant,
    /// `u₀ = ε(1 + 2cos 2x)`
    Smooth,
}

/// Fully resolved parameters of one norm-inflation family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllposedSpec {
    pub family: IllposedFamily,
    pub eps: f64,
    pub s: f64,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub m0: u64,
    pub m1: u64,
    pub n_loc: u64,
    pub t: f64,
    /// Fixed truncation; `None` uses `M₀(2M₁+1)` for the `ε`-data families
    /// and `4N` for the localized family, evaluated per sweep point.
    pub kmax: Option<usize>,
    pub data: IllposedData,
}

impl IllposedSpec {
    /// Defaults for `family`: `ε = 0.1`, `s = 0`, `M₀ = M₁ = 10`, `N = 64`,
    /// `p = ∞` (4 for the log-weighted family), `α` at the midpoint of
    /// `(1/p, 1/2)`, `β = 0.75`, `γ = 2.5` (0 for the localized family).
    pub fn new(family: IllposedFamily) -> Self {
        let p = match family {
            IllposedFamily::Thm3Finp => 4.0,
            _ => f64::INFINITY,
        };
        let m0 = 10;
        let mut spec = Self {
            family,
            eps: 0.1,
            s: 0.0,
            p,
            alpha: midpoint_alpha(p),
            beta: 0.75,
            gamma: if family == IllposedFamily::Thm5LogGrow { 0.0 } else { 2.5 },
            m0,
            m1: 10,
            n_loc: 64,
            t: 1e-3,
            kmax: None,
            data: IllposedData::Constant,
        };
        spec.t = spec.default_time();
        spec
    }

    /// `t = (π/2) M₀^{-2}` for the `ε`-data families, `10⁻³` otherwise.
    pub fn default_time(&self) -> f64 {
        match self.family {
            IllposedFamily::Thm5LogGrow => 1e-3,
            _ => 0.5 * PI / (self.m0 as f64).powi(2),
        }
    }

    /// Sobolev index at which `‖A₂‖` is measured.
    pub fn norm_index(&self) -> f64 {
        match self.family {
            IllposedFamily::Thm3Pinf => self.s + gamma_p(f64::INFINITY),
            IllposedFamily::Thm3Finp => self.s + gamma_p(self.p),
            IllposedFamily::Thm4Hs => self.s + self.gamma,
            IllposedFamily::Thm5LogGrow => self.gamma,
        }
    }

    pub fn variant(&self) -> IllPosedVariant {
        match self.family {
            IllposedFamily::Thm3Pinf => IllPosedVariant::Pinf { s: self.s },
            IllposedFamily::Thm3Finp => IllPosedVariant::LogP {
                s: self.s,
                p: self.p,
                alpha: self.alpha,
            },
            IllposedFamily::Thm4Hs => IllPosedVariant::Hs {
                s: self.s,
                beta: self.beta,
            },
            IllposedFamily::Thm5LogGrow => IllPosedVariant::LogGrow,
        }
    }

    /// Sets the swept parameter (`M₁`, or `N` for the localized family).
    pub fn with_param(&self, param: u64) -> Self {
        let mut spec = self.clone();
        match self.family {
            IllposedFamily::Thm5LogGrow => spec.n_loc = param,
            _ => spec.m1 = param,
        }
        spec
    }

    pub fn param(&self) -> u64 {
        match self.family {
            IllposedFamily::Thm5LogGrow => self.n_loc,
            _ => self.m1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::validation("eps", "must be positive"));
        }
        if !(self.s >= 0.0) {
            return Err(Error::validation("s", "must be >= 0"));
        }
        crate::potentials::validate_variant(self.variant())
            .map_err(|e| Error::validation("family", e.to_string()))?;
        match self.family {
            IllposedFamily::Thm5LogGrow => {
                if !(self.t > 0.0 && self.t <= 1e-3) {
                    return Err(Error::validation("t", "needs 0 < t <= 1e-3"));
                }
                if self.n_loc <= 20 {
                    return Err(Error::validation("n_loc", "needs N > 20"));
                }
            }
            _ => {
                if self.m0 < 10 || self.m1 < 10 {
                    return Err(Error::validation("m0/m1", "both must be >= 10"));
                }
                let t = self.default_time();
                if (self.t - t).abs() > 1e-15 * t {
                    return Err(Error::validation("t", format!("must equal (π/2)·M0^-2 = {t}")));
                }
                if self.family == IllposedFamily::Thm4Hs && !(self.gamma > 2.0) {
                    return Err(Error::validation("gamma", "needs γ > 2"));
                }
            }
        }
        let needed = self.min_kmax();
        if let Some(kmax) = self.kmax {
            if kmax < needed {
                return Err(Error::validation(
                    "kmax",
                    format!("{kmax} does not cover the resonant set (needs >= {needed})"),
                ));
            }
        }
        Ok(())
    }

    /// Largest wavenumber the construction touches: `max 𝕂 = M₀(2M₁+1)`, or
    /// `N + 30` for the localized family.
    pub fn min_kmax(&self) -> usize {
        match self.family {
            IllposedFamily::Thm5LogGrow => self.n_loc as usize + 30,
            _ => (self.m0 * (2 * self.m1 + 1)) as usize,
        }
    }

    pub fn effective_kmax(&self) -> usize {
        self.kmax.unwrap_or(match self.family {
            IllposedFamily::Thm5LogGrow => 4 * self.n_loc as usize,
            _ => self.min_kmax(),
        })
    }

    /// The family's explicit lower bound on `‖A₂(u₀)‖`.
    ///
    /// For the localized family the unknown constant is left out, so the
    /// value is `t ln N / 2`.
    pub fn lower_bound(&self) -> f64 {
        let eps = self.eps;
        let cubic = 0.5 * PI * (self.m0 as f64).powi(-2) * eps.powi(3);
        match self.family {
            IllposedFamily::Thm3Pinf => {
                2f64.sqrt() * eps * (self.m0 as f64).powf(-0.5) * ((2 * self.m1 + 1) as f64).ln().sqrt() - cubic
            }
            IllposedFamily::Thm3Finp => {
                let sum: f64 = (2..=self.m1).map(|k| (k as f64).recip() * (k as f64).ln().powf(-2.0 * self.alpha)).sum();
                2f64.sqrt() * eps * sum.sqrt() - cubic
            }
            IllposedFamily::Thm4Hs => {
                2f64.sqrt() * eps * (self.m1 as f64).powf(self.gamma - 2.0 - self.beta + 0.5) - cubic
            }
            IllposedFamily::Thm5LogGrow => 0.5 * self.t * (self.n_loc as f64).ln(),
        }
    }

    /// Grid, initial datum and potential for the current parameter.
    pub fn build(&self) -> Result<(SpectralField, Potential)> {
        let kmax = self.effective_kmax();
        // room for ξ̂_{2k} at every output mode
        let grid = Grid::new(4 * kmax + 4)?;
        let xi = gen_illposed_potential(&grid, self.variant())?;
        let eps = Complex64::new(self.eps, 0.0);
        let f = match self.family {
            IllposedFamily::Thm5LogGrow => {
                let n = self.n_loc as i64;
                let amp = eps * (n as f64).powf(-self.gamma);
                SpectralField::from_fn(&grid, |k| if (k - n).abs() <= 10 { amp } else { Complex64::new(0.0, 0.0) })
            }
            _ => match self.data {
                IllposedData::Constant => SpectralField::from_fn(&grid, |k| if k == 0 { eps } else { Complex64::new(0.0, 0.0) }),
                IllposedData::Smooth => SpectralField::from_fn(&grid, |k| {
                    if k == 0 || k.abs() == 2 {
                        eps
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                }),
            },
        };
        Ok((f, xi))
    }

    /// `‖A₂(u₀)‖` at the family's norm index.
    pub fn a2_norm(&self) -> Result<f64> {
        self.validate()?;
        let (f, xi) = self.build()?;
        let a2 = second_iterate_a2(&f, &xi, self.t, self.effective_kmax())?;
        Ok(a2.sobolev_norm(self.norm_index()))
    }
}

/// `α = (1/p + 1/2)/2`.
pub fn midpoint_alpha(p: f64) -> f64 {
    0.5 * (1.0 / p + 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationPoint {
    pub param: u64,
    pub norm: f64,
    pub lower_bound: f64,
}

/// `‖A₂(u₀)‖` along an increasing sweep of `M₁` (or `N`).
pub fn norm_inflation_curve(spec: &IllposedSpec, sweep: &[u64]) -> Result<Vec<InflationPoint>> {
    if sweep.is_empty() {
        return Err(Error::param("sweep", "needs at least one value"));
    }
    if sweep.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("sweep", "values must be strictly increasing"));
    }
    sweep
        .par_iter()
        .map(|&param| {
            let point = spec.with_param(param);
            Ok(InflationPoint {
                param,
                norm: point.a2_norm()?,
                lower_bound: point.lower_bound(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{gen_powerlaw_potential, PotentialKind};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mass_examples() {
        let g = Grid::new(32).unwrap();
        let u = SpectralField::to_spectral(&g, &vec![c(0.3, -0.4); 32]).unwrap();
        assert!((mass(&u) - 0.25).abs() < 1e-15);
        let u = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.0, x) + Complex64::from_polar(1.0, 2.0 * x));
        assert!((mass(&u) - 2.0).abs() < 1e-14);
        let v = u.free_propagate(0.7);
        assert!((mass(&v) - mass(&u)).abs() < 1e-14);
    }

    #[test]
    fn energy_examples() {
        let g = Grid::new(32).unwrap();
        let zero = Potential::zero(&g);
        let u = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.0, x));
        assert!((energy(&u, &zero, 0.0).unwrap() - 2.0 * PI).abs() < 1e-12);
        let cst = c(0.6, 0.8) * 1.1;
        let u = SpectralField::to_spectral(&g, &vec![cst; 32]).unwrap();
        let lambda = -1.7;
        let expect = PI * lambda * cst.norm_sqr().powi(2);
        assert!((energy(&u, &zero, lambda).unwrap() - expect).abs() < 1e-12);
        assert!(energy(&u, &Potential::zero(&Grid::new(16).unwrap()), 1.0).is_err());
    }

    #[test]
    fn energy_matches_dense_quadrature() {
        // band-limited data, trapezoid on a 16x finer grid
        let g = Grid::new(32).unwrap();
        let xi = gen_powerlaw_potential(&g, 1.0, 1.0, 1.0, 0.5, 9).unwrap();
        let xi = Potential::from_field(&SpectralField::from_fn(&g, |k| if k.abs() <= 4 { xi.coeff(k) } else { c(0.0, 0.0) }), PotentialKind::Table);
        let u = SpectralField::from_fn(&g, |k| if k.abs() <= 4 { c(1.0 / (1 + k * k) as f64, 0.1 * k as f64) } else { c(0.0, 0.0) });
        let lambda = 0.8;
        let m = 512;
        let h = 2.0 * PI / m as f64;
        let eval = |field: &SpectralField, x: f64| -> Complex64 {
            field.modes().map(|(k, a)| a * Complex64::from_polar(1.0, k as f64 * x)).sum()
        };
        let du = u.derivative();
        let (mut e, mut mq) = (0.0, 0.0);
        for j in 0..m {
            let x = -PI + h * j as f64;
            let v = eval(&u, x);
            let rho = v.norm_sqr();
            e += h * (eval(&du, x).norm_sqr() - eval(xi.field(), x).re * rho + 0.5 * lambda * rho * rho);
            mq += h * rho / (2.0 * PI);
        }
        let got = energy(&u, &xi, lambda).unwrap();
        assert!((got - e).abs() < 1e-10 * e.abs(), "{got} vs {e}");
        assert!((mass(&u) - mq).abs() < 1e-10 * mq);
    }

    #[test]
    fn relative_error_examples() {
        let g = Grid::new(64).unwrap();
        let r = SpectralField::from_physical_fn(&g, |x| c(x.cos(), (2.0 * x).sin()));
        assert_eq!(relative_l2_error(&r, &r).unwrap(), 0.0);
        assert!((relative_l2_error(&r.scaled(c(2.0, 0.0)), &r).unwrap() - 1.0).abs() < 1e-15);
        let mut bump = SpectralField::zeros(&g);
        bump.set_coeff(5, c(r.l2_norm() / 10.0 / (2.0 * PI).sqrt(), 0.0));
        let u = r.add(&bump).unwrap();
        assert!((relative_l2_error(&u, &r).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(relative_l2_error(&r, &SpectralField::zeros(&g)), Err(Error::ZeroReference)));
    }

    #[test]
    fn decay_slope_examples() {
        let g = Grid::new(256).unwrap();
        let f = SpectralField::from_fn(&g, |k| if k == 0 { c(1.0, 0.0) } else { c((k.abs() as f64).powf(-2.0), 0.0) });
        let [lo, hi] = default_decay_window(&g);
        let fit = decay_slope(&f, lo, hi).unwrap();
        assert!((fit.fitted_exponent + 2.0).abs() < 1e-6);
        assert!(!fit.floor_detected);

        // multiplicative noise from a fixed pseudo-random sequence
        let mut state = 12345u64;
        let mut noise = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            2.0 * ((state >> 11) as f64 / (1u64 << 53) as f64) - 1.0
        };
        let mut f = SpectralField::zeros(&g);
        for k in 1..128i64 {
            let a = (k as f64).powf(-2.25);
            f.set_coeff(k, c(a * (1.0 + 0.3 * noise()), 0.0));
            f.set_coeff(-k, c(a * (1.0 + 0.3 * noise()), 0.0));
        }
        let fit = decay_slope(&f, 8, 120).unwrap();
        assert!((fit.fitted_exponent + 2.25).abs() < 0.1, "{}", fit.fitted_exponent);

        let mut spike = SpectralField::zeros(&g);
        spike.set_coeff(1, c(1.0, 0.0));
        assert!(matches!(decay_slope(&spike, 8, 32), Err(Error::InsufficientBins(0))));
        assert!(decay_slope(&f, 1, 32).is_err());
        assert!(decay_slope(&f, 8, 128).is_err());
    }

    #[test]
    fn convergence_order_examples() {
        let taus = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = taus.iter().map(|t: &f64| 3.0 * t.powf(0.25)).collect();
        let fit = convergence_order(&taus, &errs).unwrap();
        assert!((fit.order - 0.25).abs() < 1e-9);
        for p in &fit.pairwise {
            assert!((p - 0.25).abs() < 1e-9);
        }
        let errs: Vec<f64> = taus.iter().map(|t| 0.5 * t).collect();
        assert!((convergence_order(&taus, &errs).unwrap().order - 1.0).abs() < 1e-12);
        assert!(matches!(
            convergence_order(&[0.1, 0.2, 0.05], &[1.0, 1.0, 1.0]),
            Err(Error::NonMonotoneSteps)
        ));
        assert!(convergence_order(&[0.1, 0.05], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn average_split_bound_on_lattice() {
        let mut values: Vec<f64> = Vec::new();
        for e in 0..=4 {
            for m in [1.0, 2.5, 5.0] {
                let v = m * 10f64.powi(e);
                if v <= 1e4 {
                    values.push(v);
                    values.push(-v);
                }
            }
        }
        for &tau in &[1e-1, 1e-2, 1e-3] {
            for &a in &values {
                for &b in &values {
                    let d = average_split_defect(a, b, tau);
                    assert!(d <= average_split_bound(a, b, tau) + 1e-15, "a={a} b={b} tau={tau}: {d}");
                }
            }
        }
        assert!((time_average_exp(0.1, 0.0) - 1.0).norm() < 1e-15);
    }

    fn brute_force_a2(f: &SpectralField, xi: &Potential, t: f64, nodes: usize) -> SpectralField {
        let h = t / nodes as f64;
        let mut acc = SpectralField::zeros(f.grid());
        for j in 0..=nodes {
            let rho = h * j as f64;
            let g = f.free_propagate(rho);
            let lin = g.mul_physical(xi.field()).unwrap();
            let cubic = g.mul_physical(&g).unwrap().mul_physical(&SpectralField::to_spectral(f.grid(), &g.to_physical().iter().map(|v| v.conj()).collect::<Vec<_>>()).unwrap()).unwrap();
            let w = if j == 0 || j == nodes { 0.5 * h } else { h };
            let integrand = lin.add(&cubic).unwrap().free_propagate(-rho);
            acc = acc.add(&integrand.scaled(c(0.0, w))).unwrap();
        }
        acc
    }

    #[test]
    fn a2_matches_time_quadrature() {
        let g = Grid::new(64).unwrap();
        let xi = Potential::from_field(
            &SpectralField::from_fn(&g, |k| if k.abs() <= 4 { c(1.0 / (1.0 + k.abs() as f64), 0.0) } else { c(0.0, 0.0) }),
            PotentialKind::Table,
        );
        let f = SpectralField::from_fn(&g, |k| {
            if k.abs() <= 3 {
                c(0.5 / (1 + k * k) as f64, 0.2 * k as f64)
            } else {
                c(0.0, 0.0)
            }
        });
        let t = 0.02;
        let fast = second_iterate_a2(&f, &xi, t, 8).unwrap();
        let slow = brute_force_a2(&f, &xi, t, 10_000);
        for k in -8..=8 {
            assert!((fast.coeff(k) - slow.coeff(k)).norm() < 1e-8, "k={k}: {} vs {}", fast.coeff(k), slow.coeff(k));
        }
        assert_eq!(fast.coeff(9), c(0.0, 0.0));
        assert!(matches!(second_iterate_a2(&f, &xi, t, 32), Err(Error::KmaxOutOfRange { .. })));
    }

    #[test]
    fn a2_dc_examples() {
        let g = Grid::new(32).unwrap();
        let eps = 0.3;
        let t = 0.7;
        let f = SpectralField::from_fn(&g, |k| if k == 0 { c(eps, 0.0) } else { c(0.0, 0.0) });
        let one = Potential::from_field(&SpectralField::from_fn(&g, |k| if k == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) }), PotentialKind::Table);
        let a2 = second_iterate_a2(&f, &one, t, 10).unwrap();
        assert!((a2.coeff(0) - c(0.0, t * eps + t * eps.powi(3))).norm() < 1e-15);
        assert!(a2.modes().filter(|(k, _)| *k != 0).all(|(_, v)| v.norm() < 1e-15));

        let a2 = second_iterate_a2(&f, &Potential::zero(&g), t, 10).unwrap();
        assert!((a2.coeff(0) - c(0.0, t * eps.powi(3))).norm() < 1e-15);
    }

    #[test]
    fn a2_resonant_set_for_delta_potential() {
        let mut spec = IllposedSpec::new(IllposedFamily::Thm3Pinf);
        spec.eps = 0.1;
        spec.m1 = 12;
        let (f, xi) = spec.build().unwrap();
        let a2 = second_iterate_a2(&f, &xi, spec.t, spec.effective_kmax()).unwrap();
        for j in 1..=spec.m1 as i64 {
            let k = spec.m0 as i64 * (2 * j + 1);
            let expect = c(-1.0, 1.0) * spec.eps * (k as f64).powi(-2);
            assert!((a2.coeff(k) - expect).norm() < 1e-14 * expect.norm() + 1e-18, "k={k}");
        }
    }

    #[test]
    fn a2_scaling() {
        let g = Grid::new(64).unwrap();
        let xi = gen_powerlaw_potential(&g, 0.5, 1.0, 1.0, 1.0, 4).unwrap();
        let f = SpectralField::from_fn(&g, |k| if k.abs() <= 3 { c(0.3, 0.1 * k as f64) } else { c(0.0, 0.0) });
        let t = 0.05;
        let lin = |f: &SpectralField| second_iterate_a2(f, &xi, t, 20).unwrap().sub(&second_iterate_a2(f, &Potential::zero(&g), t, 20).unwrap()).unwrap();
        let cub = |f: &SpectralField| second_iterate_a2(f, &Potential::zero(&g), t, 20).unwrap();
        for factor in [c(2.0, 0.0), c(0.0, 1.0)] {
            let scaled = f.scaled(factor);
            let dl = lin(&scaled).sub(&lin(&f).scaled(factor)).unwrap().max_abs_coeff();
            let dc = cub(&scaled).sub(&cub(&f).scaled(factor * factor.norm_sqr())).unwrap().max_abs_coeff();
            assert!(dl < 1e-13 && dc < 1e-13, "{factor}: {dl} {dc}");
        }
    }

    #[test]
    fn illposed_spec_validation() {
        let spec = IllposedSpec::new(IllposedFamily::Thm3Pinf);
        assert!(spec.validate().is_ok());
        assert!((spec.t - 0.5 * PI / 100.0).abs() < 1e-18);
        let mut bad = spec.clone();
        bad.t = 1e-3;
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.kmax = Some(50);
        assert!(bad.validate().is_err());
        let finp = IllposedSpec::new(IllposedFamily::Thm3Finp);
        assert!((finp.alpha - 0.375).abs() < 1e-15);
        assert!(finp.validate().is_ok());
        let mut thm5 = IllposedSpec::new(IllposedFamily::Thm5LogGrow);
        assert!(thm5.validate().is_ok());
        thm5.t = 2e-3;
        assert!(thm5.validate().is_err());
        assert!(norm_inflation_curve(&spec, &[20, 10]).is_err());
    }

    #[test]
    fn inflation_curve_is_linear_in_eps_for_the_potential_part() {
        let mut spec = IllposedSpec::new(IllposedFamily::Thm3Pinf);
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            spec.eps = eps;
            let v = spec.a2_norm().unwrap() / eps;
            if prev.is_finite() {
                assert!((v - prev).abs() < 1e-3 * prev);
            }
            prev = v;
        }
    }
}
