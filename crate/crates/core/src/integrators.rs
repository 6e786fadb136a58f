//! Time steppers for `i∂_t u + ∂²u + ξu = λ|u|²u` on the torus.
//!
//! All five schemes share [`Stepper`], which precomputes the Fourier
//! multipliers and (for the finite difference scheme) the factored linear
//! system once per `(scheme, potential, config)`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{energy, mass};
use crate::error::{Error, Result};
use crate::linalg::CyclicTridiagonal;
use crate::potentials::{gamma_p, Potential};
use crate::spectral::{dtau_multiplier, Grid, SpectralField};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    /// `u⁺ = iτ𝒟_τ[ξ𝒟_τ u] + 𝒩_τ[e^{iτ∂²}u]`
    #[serde(rename = "LRI", alias = "lri")]
    Lri,
    /// Lie–Trotter splitting.
    #[serde(rename = "LIE", alias = "lie")]
    Lie,
    /// Exponential wave integrator.
    #[serde(rename = "EWI", alias = "ewi")]
    Ewi,
    /// First-order low-regularity integrator built on `𝒟_{-τ}ξ`.
    #[serde(rename = "BRONSARD_LRI", alias = "bronsard")]
    Bronsard,
    /// Semi-implicit finite differences with a centered stencil.
    #[serde(rename = "FD_SEMI_IMPLICIT", alias = "fd")]
    Fd,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::Lri,
        SchemeId::Lie,
        SchemeId::Ewi,
        SchemeId::Bronsard,
        SchemeId::Fd,
    ];

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Lri => "lri",
            SchemeId::Lie => "lie",
            SchemeId::Ewi => "ewi",
            SchemeId::Bronsard => "bronsard",
            SchemeId::Fd => "fd",
        }
    }

    /// Canonical name used in output files.
    pub fn label(self) -> &'static str {
        match self {
            SchemeId::Lri => "LRI",
            SchemeId::Lie => "LIE",
            SchemeId::Ewi => "EWI",
            SchemeId::Bronsard => "BRONSARD_LRI",
            SchemeId::Fd => "FD_SEMI_IMPLICIT",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s) || id.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param("scheme", format!("unknown scheme `{s}` (lri|lie|ewi|bronsard|fd)")))
    }
}

/// Step size, nonlinearity and filter settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub tau: f64,
    pub lambda: f64,
    pub epsilon0: f64,
    pub s_assumed: f64,
    pub p_assumed: f64,
    /// Apply `P_{≤N}` inside `𝒩_τ`.
    pub filter: bool,
}

impl StepperConfig {
    /// Defaults to `s = 0`, `p = ∞` and the filter switched off.
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::param("tau", format!("time step must be positive, got {tau}")));
        }
        if !lambda.is_finite() {
            return Err(Error::param("lambda", "must be finite"));
        }
        let (s, p) = (0.0, f64::INFINITY);
        Ok(Self {
            tau,
            lambda,
            epsilon0: default_epsilon0(s, p),
            s_assumed: s,
            p_assumed: p,
            filter: false,
        })
    }

    /// Re-derives the default `ε₀` from the assumed regularity of `ξ`.
    pub fn with_regularity(mut self, s: f64, p: f64) -> Self {
        self.s_assumed = s;
        self.p_assumed = p;
        self.epsilon0 = default_epsilon0(s, p);
        self
    }

    pub fn with_epsilon0(mut self, epsilon0: f64) -> Result<Self> {
        if !(epsilon0 > 0.0 && epsilon0 < 0.5) {
            return Err(Error::param("epsilon0", "must lie in (0, 1/2)"));
        }
        self.epsilon0 = epsilon0;
        Ok(self)
    }

    pub fn with_filter(mut self, filter: bool) -> Self {
        self.filter = filter;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        let fresh = StepperConfig::new(tau, self.lambda)?;
        self.tau = fresh.tau;
        Ok(self)
    }

    /// `N = ⌊τ^{-1/2+ε₀}⌋`, at least 1.
    pub fn n_filter(&self) -> usize {
        (self.tau.powf(-0.5 + self.epsilon0).floor() as usize).max(1)
    }

    /// Whether `P_{≤N}` removes any mode representable on `grid`.
    pub fn filter_active(&self, grid: &Grid) -> bool {
        self.filter && (self.n_filter() as i64) < -grid.k_min()
    }
}

/// `ε₀ = min(1/(8(s + γ_p)), 1/8)`.
pub fn default_epsilon0(s: f64, p: f64) -> f64 {
    (1.0 / (8.0 * (s + gamma_p(p)))).min(0.125)
}

enum SchemeData {
    Plain,
    Bronsard {
        // 𝒟_{-τ}ξ on the grid
        dm_xi: Vec<Complex64>,
        // multiplier of 𝒟_{-2τ}
        dm2: Vec<Complex64>,
    },
    Fd {
        system: CyclicTridiagonal,
    },
}

/// One scheme bound to a potential and a step configuration.
pub struct Stepper {
    scheme: SchemeId,
    cfg: StepperConfig,
    grid: Grid,
    xi: Vec<f64>,
    propagator: Vec<Complex64>,
    dtau: Vec<Complex64>,
    filter_cutoff: Option<f64>,
    data: SchemeData,
}

impl Stepper {
    pub fn new(scheme: SchemeId, xi: &Potential, cfg: &StepperConfig) -> Result<Self> {
        let grid = xi.grid().clone();
        let tau = cfg.tau;
        let propagator = grid.multiplier(|k| Complex64::from_polar(1.0, -k * k * tau));
        let dtau = grid.multiplier(|k| dtau_multiplier(k, tau));
        let data = match scheme {
            SchemeId::Bronsard => {
                let mut dm_xi: Vec<Complex64> = xi.field().coeffs.clone();
                for (c, k) in dm_xi.iter_mut().zip(grid.wavenumbers()) {
                    *c *= dtau_multiplier(*k, -tau);
                }
                grid.inverse_in_place(&mut dm_xi);
                let dm2 = grid.multiplier(|k| dtau_multiplier(k, -2.0 * tau));
                SchemeData::Bronsard { dm_xi, dm2 }
            }
            SchemeId::Fd => {
                let h = grid.spacing();
                let inv_h2 = 1.0 / (h * h);
                let diag = xi
                    .values()
                    .iter()
                    .map(|&x| Complex64::new(x - 2.0 * inv_h2, 1.0 / tau))
                    .collect();
                let system = CyclicTridiagonal::new(diag, Complex64::new(inv_h2, 0.0))?;
                SchemeData::Fd { system }
            }
            _ => SchemeData::Plain,
        };
        let filter_cutoff = cfg.filter_active(&grid).then(|| cfg.n_filter() as f64);
        Ok(Self {
            scheme,
            cfg: *cfg,
            grid,
            xi: xi.values().to_vec(),
            propagator,
            dtau,
            filter_cutoff,
            data,
        })
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step(&self, u: &SpectralField) -> Result<SpectralField> {
        if *u.grid() != self.grid {
            return Err(Error::GridMismatch {
                left: u.n_modes(),
                right: self.grid.n_modes(),
            });
        }
        let coeffs = match self.scheme {
            SchemeId::Lri => self.lri(&u.coeffs),
            SchemeId::Lie => self.lie(&u.coeffs),
            SchemeId::Ewi => self.ewi(&u.coeffs),
            SchemeId::Bronsard => self.bronsard(&u.coeffs),
            SchemeId::Fd => self.fd(&u.coeffs),
        };
        Ok(SpectralField::from_storage(&self.grid, coeffs))
    }

    fn times(a: &[Complex64], m: &[Complex64]) -> Vec<Complex64> {
        a.iter().zip(m).map(|(x, y)| x * y).collect()
    }

    fn physical(&self, coeffs: Vec<Complex64>) -> Vec<Complex64> {
        let mut buf = coeffs;
        self.grid.inverse_in_place(&mut buf);
        buf
    }

    fn spectral(&self, values: Vec<Complex64>) -> Vec<Complex64> {
        let mut buf = values;
        self.grid.forward_in_place(&mut buf);
        buf
    }

    /// `iτ𝒟_τ[ξ 𝒟_τ u]`
    fn lri_potential_term(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut a = self.physical(Self::times(u, &self.dtau));
        for (v, x) in a.iter_mut().zip(&self.xi) {
            *v *= x;
        }
        let a = self.spectral(a);
        let scale = I * self.cfg.tau;
        a.iter().zip(&self.dtau).map(|(v, m)| scale * v * m).collect()
    }

    /// `𝒩_τ[f] = e^{-iτλ|P_{≤N} f|²} f`, with `f` given by coefficients.
    fn phase_step(&self, f: Vec<Complex64>) -> Vec<Complex64> {
        let amplitude = self.filter_cutoff.map(|cutoff| {
            let filtered: Vec<Complex64> = f
                .iter()
                .zip(self.grid.wavenumbers())
                .map(|(c, k)| if k.abs() <= cutoff { *c } else { Complex64::new(0.0, 0.0) })
                .collect();
            self.physical(filtered)
        });
        let mut values = self.physical(f);
        let theta = -self.cfg.tau * self.cfg.lambda;
        match amplitude {
            Some(a) => {
                for (v, w) in values.iter_mut().zip(&a) {
                    *v *= Complex64::from_polar(1.0, theta * w.norm_sqr());
                }
            }
            None => {
                for v in values.iter_mut() {
                    *v *= Complex64::from_polar(1.0, theta * v.norm_sqr());
                }
            }
        }
        self.spectral(values)
    }

    fn lri(&self, u: &[Complex64]) -> Vec<Complex64> {
        let potential = self.lri_potential_term(u);
        let nonlinear = self.phase_step(Self::times(u, &self.propagator));
        potential.iter().zip(&nonlinear).map(|(a, b)| a + b).collect()
    }

    fn lie(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut values = self.physical(u.to_vec());
        let (tau, lambda) = (self.cfg.tau, self.cfg.lambda);
        for (v, x) in values.iter_mut().zip(&self.xi) {
            *v *= Complex64::from_polar(1.0, -tau * (-x + lambda * v.norm_sqr()));
        }
        Self::times(&self.spectral(values), &self.propagator)
    }

    fn ewi(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut values = self.physical(u.to_vec());
        let lambda = self.cfg.lambda;
        for (v, x) in values.iter_mut().zip(&self.xi) {
            *v *= -x + lambda * v.norm_sqr();
        }
        let g = self.spectral(values);
        let scale = -I * self.cfg.tau;
        u.iter()
            .zip(&g)
            .zip(self.propagator.iter().zip(&self.dtau))
            .map(|((c, gc), (p, d))| p * c + scale * d * gc)
            .collect()
    }

    fn bronsard(&self, u: &[Complex64]) -> Vec<Complex64> {
        let SchemeData::Bronsard { dm_xi, dm2 } = &self.data else {
            unreachable!("bronsard stepper without its data")
        };
        let values = self.physical(u.to_vec());
        let conj: Vec<Complex64> = values.iter().map(|v| v.conj()).collect();
        let conj_hat = self.spectral(conj);
        let smoothed_conj = self.physical(Self::times(&conj_hat, dm2));
        let (tau, lambda) = (self.cfg.tau, self.cfg.lambda);
        let w: Vec<Complex64> = values
            .iter()
            .zip(dm_xi)
            .zip(&smoothed_conj)
            .map(|((v, dx), sc)| v + I * tau * v * dx - I * tau * lambda * v * v * sc)
            .collect();
        Self::times(&self.spectral(w), &self.propagator)
    }

    fn fd(&self, u: &[Complex64]) -> Vec<Complex64> {
        let SchemeData::Fd { system } = &self.data else {
            unreachable!("fd stepper without its system")
        };
        let values = self.physical(u.to_vec());
        let inv_tau = 1.0 / self.cfg.tau;
        let lambda = self.cfg.lambda;
        let rhs: Vec<Complex64> = values
            .iter()
            .map(|v| I * inv_tau * v + lambda * v.norm_sqr() * v)
            .collect();
        self.spectral(system.solve(&rhs))
    }

    /// Residual `A u⁺ - rhs` of the finite difference step, in physical space.
    pub fn fd_residual(&self, u: &SpectralField, next: &SpectralField) -> Option<Vec<Complex64>> {
        let SchemeData::Fd { system } = &self.data else {
            return None;
        };
        let inv_tau = 1.0 / self.cfg.tau;
        let lambda = self.cfg.lambda;
        let applied = system.apply(&next.to_physical());
        Some(
            applied
                .iter()
                .zip(u.to_physical())
                .map(|(a, v)| a - (I * inv_tau * v + lambda * v.norm_sqr() * v))
                .collect(),
        )
    }
}

fn single_step(scheme: SchemeId, u: &SpectralField, xi: &Potential, cfg: &StepperConfig) -> Result<SpectralField> {
    Stepper::new(scheme, xi, cfg)?.step(u)
}

pub fn lri_step(u: &SpectralField, xi: &Potential, cfg: &StepperConfig) -> Result<SpectralField> {
    single_step(SchemeId::Lri, u, xi, cfg)
}

pub fn lie_step(u: &SpectralField, xi: &Potential, cfg: &StepperConfig) -> Result<SpectralField> {
    single_step(SchemeId::Lie, u, xi, cfg)
}

pub fn ewi_step(u: &SpectralField, xi: &Potential, cfg: &StepperConfig) -> Result<SpectralField> {
    single_step(SchemeId::Ewi, u, xi, cfg)
}

pub fn bronsard_step(u: &SpectralField, xi: &Potential, cfg: &StepperConfig) -> Result<SpectralField> {
    single_step(SchemeId::Bronsard, u, xi, cfg)
}

pub fn fd_step(u: &SpectralField, xi: &Potential, cfg: &StepperConfig) -> Result<SpectralField> {
    single_step(SchemeId::Fd, u, xi, cfg)
}

/// `iτ𝒟_{-τ}[ξ 𝒟_τ h]`, the potential increment seen in the twisted frame.
///
/// For real `ξ` it is orthogonal to `h` in `L²`, which is what keeps the
/// potential part of the LRI step stable.
pub fn twisted_potential_term(h: &SpectralField, xi: &Potential, tau: f64) -> Result<SpectralField> {
    let inner = h.apply_dtau(tau).mul_physical(xi.field())?;
    Ok(inner.apply_dtau(-tau).scaled(I * tau))
}

/// Number of steps of size `tau` in `t_final`.
pub fn step_count(t_final: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !(t_final >= 0.0) {
        return Err(Error::NonIntegerSteps { t_final, tau });
    }
    let n = (t_final / tau).round();
    if (n * tau - t_final).abs() > 1e-12 * t_final.max(1.0) {
        return Err(Error::NonIntegerSteps { t_final, tau });
    }
    Ok(n as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observer {
    Mass { stride: usize },
    Energy { stride: usize },
    Snapshot { stride: usize },
}

impl Observer {
    fn stride(&self) -> usize {
        match *self {
            Observer::Mass { stride } | Observer::Energy { stride } | Observer::Snapshot { stride } => stride.max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Mass(f64),
    Energy(f64),
    Snapshot(SpectralField),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub step: usize,
    pub time: f64,
    pub observation: Observation,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub final_state: SpectralField,
    pub steps: usize,
    pub records: Vec<ObservationRecord>,
}

/// Runs `t_final / τ` steps of `scheme`, recording observers at step 0 and
/// every `stride` steps.
pub fn evolve(
    u0: &SpectralField,
    xi: &Potential,
    scheme: SchemeId,
    cfg: &StepperConfig,
    t_final: f64,
    observers: &[Observer],
) -> Result<Trajectory> {
    let steps = step_count(t_final, cfg.tau)?;
    let stepper = Stepper::new(scheme, xi, cfg)?;
    let mut records = Vec::new();
    let mut observe = |n: usize, u: &SpectralField| -> Result<()> {
        for obs in observers {
            if !n.is_multiple_of(obs.stride()) {
                continue;
            }
            let observation = match obs {
                Observer::Mass { .. } => Observation::Mass(mass(u)),
                Observer::Energy { .. } => Observation::Energy(energy(u, xi, cfg.lambda)?),
                Observer::Snapshot { .. } => Observation::Snapshot(u.clone()),
            };
            records.push(ObservationRecord {
                step: n,
                time: n as f64 * cfg.tau,
                observation,
            });
        }
        Ok(())
    };

    let mut u = u0.clone();
    observe(0, &u)?;
    for n in 1..=steps {
        u = stepper.step(&u)?;
        if !u.is_finite() {
            return Err(Error::BlowUp {
                step: n,
                time: n as f64 * cfg.tau,
            });
        }
        observe(n, &u)?;
    }
    Ok(Trajectory {
        final_state: u,
        steps,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{gen_delta_comb, gen_powerlaw_potential, gen_rough_initial, Interval, RoughInitSpec};
    use std::f64::consts::PI;

    fn smooth(grid: &Grid) -> SpectralField {
        SpectralField::from_physical_fn(grid, |x| Complex64::new(x.cos() / (2.0 + (2.0 * x).sin()), 0.2 * x.sin()))
    }

    fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).unwrap().max_abs_coeff()
    }

    #[test]
    fn config_defaults() {
        let cfg = StepperConfig::new(1e-4, 1.0).unwrap();
        assert!((cfg.epsilon0 - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(cfg.n_filter(), (1e-4f64).powf(-0.5 + 1.0 / 12.0).floor() as usize);
        assert!(!cfg.filter_active(&Grid::new(1024).unwrap()));
        let on = cfg.with_filter(true);
        assert!(on.filter_active(&Grid::new(1024).unwrap()));
        assert!(!on.filter_active(&Grid::new(64).unwrap()));
        assert!(StepperConfig::new(0.0, 1.0).is_err());
        assert!(cfg.with_epsilon0(0.5).is_err());
        let hs = cfg.with_regularity(0.0, 2.0);
        assert!((hs.epsilon0 - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn scheme_names_round_trip() {
        for id in SchemeId::ALL {
            assert_eq!(id.name().parse::<SchemeId>().unwrap(), id);
            assert_eq!(id.label().parse::<SchemeId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.label()));
            assert_eq!(serde_json::from_str::<SchemeId>(&format!("\"{}\"", id.name())).unwrap(), id);
        }
        assert!("rk4".parse::<SchemeId>().is_err());
    }

    #[test]
    fn free_flow_limit_of_spectral_schemes() {
        let g = Grid::new(64).unwrap();
        let xi = Potential::zero(&g);
        let u = smooth(&g);
        let cfg = StepperConfig::new(0.01, 0.0).unwrap();
        let exact = u.free_propagate(0.01);
        for scheme in [SchemeId::Lri, SchemeId::Lie, SchemeId::Ewi, SchemeId::Bronsard] {
            let out = Stepper::new(scheme, &xi, &cfg).unwrap().step(&u).unwrap();
            assert!(max_diff(&out, &exact) < 1e-14, "{scheme}");
        }
    }

    #[test]
    fn lri_phase_step_keeps_modulus() {
        let g = Grid::new(32).unwrap();
        let xi = Potential::zero(&g);
        let u = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.3, x));
        let out = lri_step(&u, &xi, &StepperConfig::new(0.1, -3.0).unwrap()).unwrap();
        for (a, b) in out.to_physical().iter().zip(u.to_physical()) {
            assert!((a.norm() - b.norm()).abs() < 1e-13);
        }
        // filtered phase is still a pure phase
        let cfg = StepperConfig::new(0.1, -3.0).unwrap().with_filter(true);
        let rough = smooth(&g);
        let out = lri_step(&rough, &xi, &cfg).unwrap();
        let propagated = rough.free_propagate(0.1).to_physical();
        for (a, b) in out.to_physical().iter().zip(&propagated) {
            assert!((a.norm() - b.norm()).abs() < 1e-13);
        }
    }

    #[test]
    fn lie_step_constant_state_and_mass() {
        let g = Grid::new(16).unwrap();
        let xi = Potential::zero(&g);
        let c = Complex64::new(0.6, -0.3);
        let u = SpectralField::to_spectral(&g, &vec![c; 16]).unwrap();
        let cfg = StepperConfig::new(0.05, 2.0).unwrap();
        let out = lie_step(&u, &xi, &cfg).unwrap();
        let expect = c * Complex64::from_polar(1.0, -0.05 * 2.0 * c.norm_sqr());
        assert!((out.coeff(0) - expect).norm() < 1e-15);

        let g = Grid::new(128).unwrap();
        let xi = gen_powerlaw_potential(&g, 0.0, 2.0, 0.0, 1.0, 3).unwrap();
        let u = smooth(&g);
        let out = lie_step(&u, &xi, &cfg).unwrap();
        assert!((mass(&out) - mass(&u)).abs() < 1e-12 * mass(&u));
    }

    #[test]
    fn ewi_examples() {
        let g = Grid::new(64).unwrap();
        let xi = gen_powerlaw_potential(&g, 2.0, 1.0, 1.0, 0.5, 8).unwrap();
        let cfg = StepperConfig::new(0.01, 1.0).unwrap();
        assert_eq!(ewi_step(&SpectralField::zeros(&g), &xi, &cfg).unwrap().max_abs_coeff(), 0.0);

        // (u⁺ - e^{iτ∂²}u)/τ → -i(-ξ + λ|u|²)u
        let u = smooth(&g);
        let vals = u.to_physical();
        let force: Vec<Complex64> = vals
            .iter()
            .zip(xi.values())
            .map(|(v, x)| -I * (-x + v.norm_sqr()) * v)
            .collect();
        let force = SpectralField::to_spectral(&g, &force).unwrap();
        let defect = |tau: f64| {
            let cfg = StepperConfig::new(tau, 1.0).unwrap();
            let out = ewi_step(&u, &xi, &cfg).unwrap();
            let quotient = out.sub(&u.free_propagate(tau)).unwrap().scaled(Complex64::new(1.0 / tau, 0.0));
            quotient.sub(&force).unwrap().l2_norm()
        };
        let (d1, d2) = (defect(1e-3), defect(5e-4));
        assert!(d1 < 0.2 * force.l2_norm());
        assert!(d1 / d2 > 1.8, "defect should halve: {d1} {d2}");
    }

    #[test]
    fn bronsard_constant_state() {
        let g = Grid::new(16).unwrap();
        let xi = Potential::zero(&g);
        let c = Complex64::new(0.4, 0.2);
        let u = SpectralField::to_spectral(&g, &vec![c; 16]).unwrap();
        let (tau, lambda) = (0.03, -1.5);
        let out = bronsard_step(&u, &xi, &StepperConfig::new(tau, lambda).unwrap()).unwrap();
        let expect = c * (1.0 - I * tau * lambda * c.norm_sqr());
        assert!((out.coeff(0) - expect).norm() < 1e-15);
        assert_eq!(bronsard_step(&SpectralField::zeros(&g), &xi, &StepperConfig::new(tau, lambda).unwrap())
            .unwrap()
            .max_abs_coeff(), 0.0);
    }

    #[test]
    fn fd_plane_wave_and_residual() {
        let g = Grid::new(32).unwrap();
        let xi = Potential::zero(&g);
        let tau = 0.01;
        let u = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.0, x));
        let out = fd_step(&u, &xi, &StepperConfig::new(tau, 0.0).unwrap()).unwrap();
        let h = g.spacing();
        let mu = 2.0 * (1.0 - h.cos()) / (h * h);
        let expect = 1.0 / (1.0 + I * tau * mu);
        assert!((out.coeff(1) - expect).norm() < 1e-13);

        let g = Grid::new(128).unwrap();
        let xi = gen_delta_comb(&g, &[0.0, 2.0, -2.0], -1.0).unwrap();
        let u = smooth(&g);
        let cfg = StepperConfig::new(1e-3, -2.0).unwrap();
        let stepper = Stepper::new(SchemeId::Fd, &xi, &cfg).unwrap();
        let next = stepper.step(&u).unwrap();
        let residual = stepper.fd_residual(&u, &next).unwrap();
        let res = residual.iter().map(|r| r.norm_sqr()).sum::<f64>().sqrt();
        let scale = u.to_physical().iter().map(|r| r.norm_sqr()).sum::<f64>().sqrt() / cfg.tau;
        assert!(res < 1e-10 * scale, "residual {res}");

        let tiny = fd_step(&u, &xi, &StepperConfig::new(1e-9, -2.0).unwrap()).unwrap();
        assert!(max_diff(&tiny, &u) < 1e-3);
    }

    #[test]
    fn twisted_potential_term_is_orthogonal() {
        let g = Grid::new(256).unwrap();
        let xi = gen_powerlaw_potential(&g, 0.0, 2.0, 2.0, 1.0, 17).unwrap();
        let h = smooth(&g).add(&smooth(&g).free_propagate(0.3).scaled(I)).unwrap();
        for &tau in &[1e-3, 1e-2, 0.1] {
            let term = twisted_potential_term(&h, &xi, tau).unwrap();
            let inner = h.inner(&term).unwrap();
            let scale = xi.field().l2_norm() * h.l2_norm().powi(2);
            assert!(inner.abs() < 1e-10 * scale, "tau={tau}: {inner}");
        }
    }

    #[test]
    fn lri_local_defect_rate() {
        let g = Grid::new(256).unwrap();
        let xi = gen_delta_comb(&g, &[0.0], -0.2).unwrap();
        let spec = RoughInitSpec {
            decay: 2.55,
            amp_range: Interval::new(0.0, 1.0),
            imag_range: None,
            seed: 11,
        };
        let u = gen_rough_initial(&g, &spec).unwrap();
        // one step against 64 substeps of the same scheme
        let defect = |tau: f64| {
            let one = lri_step(&u, &xi, &StepperConfig::new(tau, -2.0).unwrap()).unwrap();
            let fine = evolve(&u, &xi, SchemeId::Lri, &StepperConfig::new(tau / 64.0, -2.0).unwrap(), tau, &[])
                .unwrap()
                .final_state;
            one.sub(&fine).unwrap().l2_norm()
        };
        let (d1, d2) = (defect(1e-3), defect(5e-4));
        assert!(d1 / d2 >= 2f64.powf(1.15), "ratio {}", d1 / d2);
    }

    #[test]
    fn evolve_edge_cases() {
        let g = Grid::new(64).unwrap();
        let xi = Potential::zero(&g);
        let u = smooth(&g);
        let cfg = StepperConfig::new(0.01, 0.0).unwrap();
        let run = evolve(&u, &xi, SchemeId::Lri, &cfg, 0.0, &[]).unwrap();
        assert_eq!(run.final_state, u);
        assert_eq!(run.steps, 0);
        assert!(matches!(
            evolve(&u, &xi, SchemeId::Lri, &StepperConfig::new(0.003, 0.0).unwrap(), 1.0, &[]),
            Err(Error::NonIntegerSteps { .. })
        ));
        let exact = u.free_propagate(0.5);
        for scheme in [SchemeId::Lri, SchemeId::Lie, SchemeId::Ewi, SchemeId::Bronsard] {
            let run = evolve(&u, &xi, scheme, &cfg, 0.5, &[]).unwrap();
            assert!(max_diff(&run.final_state, &exact) < 1e-10, "{scheme}");
        }
    }

    #[test]
    fn evolve_observers_and_blowup() {
        let g = Grid::new(32).unwrap();
        let xi = Potential::zero(&g);
        let u = smooth(&g);
        let cfg = StepperConfig::new(0.1, 1.0).unwrap();
        let obs = [Observer::Mass { stride: 2 }, Observer::Snapshot { stride: 5 }];
        let run = evolve(&u, &xi, SchemeId::Lie, &cfg, 1.0, &obs).unwrap();
        let mass_steps: Vec<usize> = run
            .records
            .iter()
            .filter(|r| matches!(r.observation, Observation::Mass(_)))
            .map(|r| r.step)
            .collect();
        assert_eq!(mass_steps, vec![0, 2, 4, 6, 8, 10]);
        let snaps = run.records.iter().filter(|r| matches!(r.observation, Observation::Snapshot(_))).count();
        assert_eq!(snaps, 3);

        // explicit EWI on a huge focusing state overflows
        let big = u.scaled(Complex64::new(1e80, 0.0));
        let err = evolve(&big, &xi, SchemeId::Ewi, &StepperConfig::new(0.1, -1.0).unwrap(), 1.0, &[]).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err}");
    }

    #[test]
    fn fd_tracks_free_flow_for_smooth_data() {
        let g = Grid::new(64).unwrap();
        let xi = Potential::zero(&g);
        let u = SpectralField::from_physical_fn(&g, |x| Complex64::from_polar(1.0, x));
        let run = evolve(&u, &xi, SchemeId::Fd, &StepperConfig::new(1e-3, 0.0).unwrap(), PI, &[]);
        // π is not a multiple of 1e-3
        assert!(run.is_err());
        let run = evolve(&u, &xi, SchemeId::Fd, &StepperConfig::new(1e-3, 0.0).unwrap(), 1.0, &[]).unwrap();
        let exact = u.free_propagate(1.0);
        assert!(max_diff(&run.final_state, &exact) < 1e-2);
    }
}
