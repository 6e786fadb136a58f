//! Rough potentials, rough initial data and the `b̂^{s,p}` norm.
//!
//! Random coefficients come from a xoshiro256** stream seeded through
//! splitmix64 (`seed_from_u64`). Uniform draws use the top 53 bits of each
//! output word, and coefficients are drawn in ascending wavenumber order, so a
//! given seed reproduces the same field on every platform.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::sync::OnceLock;

use num_complex::Complex64;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField};

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn symmetric(bound: f64) -> Self {
        Self { lo: -bound, hi: bound }
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Seeded uniform sampler.
pub struct UniformStream {
    rng: Xoshiro256StarStar,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn draw(&mut self, range: Interval) -> f64 {
        range.lo + (range.hi - range.lo) * self.unit()
    }
}

/// Coefficient laws of the counterexample potentials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum IllPosedVariant {
    /// `1 + Σ_{k≠0} |k|^{-s} e^{ikx}`; the periodic delta `2πδ` when `s = 0`.
    Pinf { s: f64 },
    /// `1 + Σ_{|k|≥2} |k|^{-(s+1/p)} (ln|k|)^{-α} e^{ikx}`, `1/p < α < 1/2`.
    LogP { s: f64, p: f64, alpha: f64 },
    /// `1 + Σ_{k≠0} |k|^{-(s+β)} e^{ikx}`, `β > 1/2`.
    Hs { s: f64, beta: f64 },
    /// `Σ_{|k|>10} ln|k| e^{ikx}`.
    LogGrow,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind {
    Zero,
    PowerLaw {
        delta: f64,
        re_range: Interval,
        im_range: Interval,
        /// `None` draws `ζ₀` from `re_range`.
        dc: Option<f64>,
        seed: u64,
    },
    DeltaComb {
        centers: Vec<f64>,
        amplitude: f64,
    },
    IllPosed(IllPosedVariant),
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BhatNorm {
    pub s: f64,
    pub p: f64,
    pub value: f64,
}

/// A real potential on the grid together with how it was made.
#[derive(Clone, Debug)]
pub struct Potential {
    field: SpectralField,
    kind: PotentialKind,
    values: OnceLock<Vec<f64>>,
    cached_norm: Option<BhatNorm>,
}

impl Potential {
    /// Wraps `field`, projecting it onto real-valued grid functions.
    pub fn from_field(field: &SpectralField, kind: PotentialKind) -> Self {
        Self {
            field: field.hermitian_symmetrized(),
            kind,
            values: OnceLock::new(),
            cached_norm: None,
        }
    }

    pub fn zero(grid: &Grid) -> Self {
        Self::from_field(&SpectralField::zeros(grid), PotentialKind::Zero)
    }

    pub fn field(&self) -> &SpectralField {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn coeff(&self, k: i64) -> Complex64 {
        self.field.coeff(k)
    }

    /// Physical values on the grid.
    pub fn values(&self) -> &[f64] {
        self.values
            .get_or_init(|| self.field.to_physical().iter().map(|v| v.re).collect())
    }

    pub fn with_cached_norm(mut self, s: f64, p: f64) -> Self {
        let value = bhat_norm(&self, s, p);
        self.cached_norm = Some(BhatNorm { s, p, value });
        self
    }

    pub fn cached_norm(&self) -> Option<BhatNorm> {
        self.cached_norm
    }

    /// Coefficient table with header `k,re,im`, ascending `k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,re,im\n");
        for (k, c) in self.field.modes() {
            let _ = writeln!(out, "{k},{:?},{:?}", c.re, c.im);
        }
        out
    }

    /// Reads a `k,re,im` table covering `[-N/2, N/2-1]`.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            what: format!("potential table line {line}"),
            message,
        };
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "k,re,im" {
                    return Err(parse_err(1, format!("expected header `k,re,im`, got `{line}`")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(parse_err(i + 1, "expected 3 columns".into()));
            }
            let k: i64 = parts[0].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let re: f64 = parts[1].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let im: f64 = parts[2].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            rows.push((k, Complex64::new(re, im)));
        }
        let grid = Grid::new(rows.len())?;
        for (expected, (k, _)) in (grid.k_min()..).zip(&rows) {
            if *k != expected {
                return Err(parse_err(0, format!("wavenumbers must run from {} upward without gaps", grid.k_min())));
            }
        }
        let mut field = SpectralField::zeros(&grid);
        for (k, c) in rows {
            field.set_coeff(k, c);
        }
        Ok(Self::from_field(&field, PotentialKind::Table))
    }
}

fn signed_power(k: i64, exponent: f64) -> f64 {
    (k.unsigned_abs() as f64).powf(-exponent)
}

/// `(-1)^k`, the `e^{ikπ}` factor from a phase origin at `x = -π`.
fn shift_sign(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `ξ(x) = Re Σ ζ_k e^{ik(x+π)}` with `ζ_k = (η₁ + iη₂)|k|^{-δ}`, `ζ₀ = dc`.
pub fn gen_powerlaw_potential(
    grid: &Grid,
    delta: f64,
    amp_bound_re: f64,
    amp_bound_im: f64,
    dc_value: f64,
    seed: u64,
) -> Result<Potential> {
    if amp_bound_re < 0.0 || amp_bound_im < 0.0 {
        return Err(Error::param("amp_bound", "amplitude bounds must be non-negative"));
    }
    gen_uniform_potential(
        grid,
        delta,
        Interval::symmetric(amp_bound_re),
        Interval::symmetric(amp_bound_im),
        Some(dc_value),
        seed,
    )
}

/// General form of [`gen_powerlaw_potential`] with arbitrary sampling intervals.
pub fn gen_uniform_potential(
    grid: &Grid,
    delta: f64,
    re_range: Interval,
    im_range: Interval,
    dc: Option<f64>,
    seed: u64,
) -> Result<Potential> {
    if !(delta >= 0.0) {
        return Err(Error::param("delta", "decay exponent must be >= 0"));
    }
    let mut stream = UniformStream::new(seed);
    let mut zeta = SpectralField::zeros(grid);
    for k in grid.k_min()..=grid.k_max() {
        let eta = Complex64::new(stream.draw(re_range), stream.draw(im_range));
        let z = if k == 0 {
            match dc {
                Some(v) => Complex64::new(v, 0.0),
                None => eta,
            }
        } else {
            eta * signed_power(k, delta)
        };
        zeta.set_coeff(k, z * shift_sign(k));
    }
    let kind = PotentialKind::PowerLaw {
        delta,
        re_range,
        im_range,
        dc,
        seed,
    };
    Ok(Potential::from_field(&zeta, kind))
}

/// `ξ = amplitude · Σ_c Σ_k e^{ik(x-c)}`, truncated to the grid.
pub fn gen_delta_comb(grid: &Grid, centers: &[f64], amplitude: f64) -> Result<Potential> {
    for &c in centers {
        if !(-std::f64::consts::PI..std::f64::consts::PI).contains(&c) {
            return Err(Error::param("centers", format!("{c} is outside [-π, π)")));
        }
    }
    let field = SpectralField::from_fn(grid, |k| {
        centers
            .iter()
            .map(|&c| Complex64::from_polar(amplitude, -(k as f64) * c))
            .sum()
    });
    let kind = PotentialKind::DeltaComb {
        centers: centers.to_vec(),
        amplitude,
    };
    Ok(Potential::from_field(&field, kind))
}

pub fn illposed_coefficient(variant: IllPosedVariant, k: i64) -> f64 {
    let ak = k.unsigned_abs() as f64;
    match variant {
        IllPosedVariant::Pinf { s } => {
            if k == 0 {
                1.0
            } else {
                ak.powf(-s)
            }
        }
        IllPosedVariant::LogP { s, p, alpha } => match k.unsigned_abs() {
            0 => 1.0,
            // ln 1 = 0: the |k| = 1 modes are left out
            1 => 0.0,
            _ => ak.powf(-(s + 1.0 / p)) * ak.ln().powf(-alpha),
        },
        IllPosedVariant::Hs { s, beta } => {
            if k == 0 {
                1.0
            } else {
                ak.powf(-(s + beta))
            }
        }
        IllPosedVariant::LogGrow => {
            if k.unsigned_abs() > 10 {
                ak.ln()
            } else {
                0.0
            }
        }
    }
}

pub fn validate_variant(variant: IllPosedVariant) -> Result<()> {
    match variant {
        IllPosedVariant::Pinf { s } | IllPosedVariant::Hs { s, .. } | IllPosedVariant::LogP { s, .. }
            if s < 0.0 =>
        {
            Err(Error::param("s", "regularity exponent must be >= 0"))
        }
        IllPosedVariant::LogP { p, alpha, .. } => {
            if !(p > 2.0) {
                return Err(Error::param("p", "needs 2 < p < ∞"));
            }
            if !(alpha > 1.0 / p && alpha < 0.5) {
                return Err(Error::param("alpha", format!("needs 1/p < α < 1/2, got {alpha}")));
            }
            Ok(())
        }
        IllPosedVariant::Hs { beta, .. } if !(beta > 0.5) => {
            Err(Error::param("beta", format!("needs β > 1/2, got {beta}")))
        }
        _ => Ok(()),
    }
}

pub fn gen_illposed_potential(grid: &Grid, variant: IllPosedVariant) -> Result<Potential> {
    validate_variant(variant)?;
    let field = SpectralField::from_fn(grid, |k| Complex64::new(illposed_coefficient(variant, k), 0.0));
    Ok(Potential::from_field(&field, PotentialKind::IllPosed(variant)))
}

/// Law of a rough initial datum `û_k = η_k |k|^{-decay} e^{ikπ}`, `û₀ = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughInitSpec {
    pub decay: f64,
    pub amp_range: Interval,
    /// Range of `Im η_k`; `None` keeps `η_k` real.
    #[serde(default)]
    pub imag_range: Option<Interval>,
    pub seed: u64,
}

impl RoughInitSpec {
    pub fn real_part_only(&self) -> bool {
        self.imag_range.is_none()
    }
}

pub fn gen_rough_initial(grid: &Grid, spec: &RoughInitSpec) -> Result<SpectralField> {
    if !(spec.decay > 0.0) {
        return Err(Error::param("decay", "decay exponent must be > 0"));
    }
    let mut stream = UniformStream::new(spec.seed);
    let mut field = SpectralField::zeros(grid);
    for k in grid.k_min()..=grid.k_max() {
        if k == 0 {
            continue;
        }
        let re = stream.draw(spec.amp_range);
        let im = spec.imag_range.map_or(0.0, |r| stream.draw(r));
        let c = Complex64::new(re, im) * signed_power(k, spec.decay) * shift_sign(k);
        field.set_coeff(k, c);
    }
    Ok(field)
}

/// Critical index `γ_p = 3/2 + 1/p`.
pub fn gamma_p(p: f64) -> f64 {
    1.5 + 1.0 / p
}

/// `|ξ̂₀| + ‖|k|^s ξ̂_k‖_{l^p(k≠0)}`; pass `f64::INFINITY` for the sup norm.
pub fn bhat_norm(pot: &Potential, s: f64, p: f64) -> f64 {
    let field = pot.field();
    let tail = field
        .modes()
        .filter(|(k, _)| *k != 0)
        .map(|(k, c)| (k.unsigned_abs() as f64).powf(s) * c.norm());
    let tail = if p.is_infinite() {
        tail.fold(0.0, f64::max)
    } else {
        tail.map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
    };
    field.coeff(0).norm() + tail
}
