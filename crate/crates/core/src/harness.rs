//! Declarative experiments: spec loading and validation, built-in presets,
//! execution and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    convergence_order, correlation, decay_slope, least_squares, midpoint_alpha,
    norm_inflation_curve, relative_l2_error, ConvergenceFit, DecayFit, IllposedData, IllposedFamily, IllposedSpec,
    InflationPoint,
};
use crate::error::{Error, Result};
use crate::integrators::{default_epsilon0, evolve, step_count, SchemeId, StepperConfig};
use crate::potentials::{gen_delta_comb, gen_rough_initial, gen_uniform_potential, Interval, Potential, RoughInitSpec};
use crate::spectral::{Grid, SpectralField};

use num_complex::Complex64;

/// Step refinement of the reference solution relative to the smallest swept step.
pub const REFERENCE_REFINEMENT: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    Regularity,
    Convergence,
    Comparison,
    Illposed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero {},
    /// `ξ = Re Σ ζ_k e^{ik(x+π)}` with `ζ_k = (η₁ + iη₂)|k|^{-δ}`.
    PowerLaw {
        delta: f64,
        re_range: Interval,
        im_range: Interval,
        /// Fixed `ζ₀`; drawn from `re_range` when absent.
        #[serde(default)]
        dc: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    DeltaComb {
        centers: Vec<f64>,
        amplitude: f64,
    },
    /// `k,re,im` coefficient table.
    Table {
        path: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `u₀ = cos x / (2 + sin 2x)`
    Smooth {},
    Rough {
        decay: f64,
        amp_range: Interval,
        #[serde(default)]
        imag_range: Option<Interval>,
        #[serde(default)]
        seed: Option<u64>,
    },
    PlaneWave {
        wavenumber: i64,
        amplitude: f64,
    },
}

/// Sweep of one norm-inflation family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllposedPlan {
    pub spec: IllposedSpec,
    pub sweep: Vec<u64>,
}

/// A fully resolved experiment. Every default is filled in, so the
/// serialized form records exactly what was run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub name: String,
    pub grid_size: usize,
    pub lambda: f64,
    pub t_final: f64,
    pub seed: u64,
    pub potential: PotentialSpec,
    pub initial: InitialSpec,
    pub schemes: Vec<SchemeId>,
    /// Step of a single run.
    pub tau: f64,
    /// Step sweep, strictly decreasing.
    pub taus: Vec<f64>,
    pub reference_refinement: u32,
    pub decay_window: [usize; 2],
    pub filter: bool,
    pub epsilon0: f64,
    pub illposed: Option<IllposedPlan>,
    pub output: Option<String>,
}

/// On-disk form of a spec: everything but `kind` is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: Option<ExperimentKind>,
    name: Option<String>,
    grid_size: Option<usize>,
    lambda: Option<f64>,
    t_final: Option<f64>,
    seed: Option<u64>,
    potential: Option<PotentialSpec>,
    initial: Option<InitialSpec>,
    schemes: Option<Vec<SchemeId>>,
    tau: Option<f64>,
    taus: Option<Vec<f64>>,
    reference_refinement: Option<u32>,
    decay_window: Option<[usize; 2]>,
    filter: Option<bool>,
    epsilon0: Option<f64>,
    illposed: Option<RawIllposed>,
    output: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIllposed {
    family: IllposedFamily,
    eps: Option<f64>,
    s: Option<f64>,
    p: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    m0: Option<u64>,
    m1: Option<u64>,
    n_loc: Option<u64>,
    t: Option<f64>,
    kmax: Option<usize>,
    data: Option<IllposedData>,
    sweep: Option<Vec<u64>>,
}

impl RawIllposed {
    fn resolve(self) -> IllposedPlan {
        let mut spec = IllposedSpec::new(self.family);
        if let Some(v) = self.eps {
            spec.eps = v;
        }
        if let Some(v) = self.s {
            spec.s = v;
        }
        if let Some(v) = self.p {
            spec.p = v;
            spec.alpha = midpoint_alpha(v);
        }
        if let Some(v) = self.alpha {
            spec.alpha = v;
        }
        if let Some(v) = self.beta {
            spec.beta = v;
        }
        if let Some(v) = self.gamma {
            spec.gamma = v;
        }
        if let Some(v) = self.m0 {
            spec.m0 = v;
        }
        if let Some(v) = self.m1 {
            spec.m1 = v;
        }
        if let Some(v) = self.n_loc {
            spec.n_loc = v;
        }
        spec.t = self.t.unwrap_or_else(|| spec.default_time());
        spec.kmax = self.kmax;
        if let Some(v) = self.data {
            spec.data = v;
        }
        let sweep = self.sweep.unwrap_or_else(|| default_sweep(spec.family));
        IllposedPlan { spec, sweep }
    }
}

fn default_sweep(family: IllposedFamily) -> Vec<u64> {
    match family {
        IllposedFamily::Thm5LogGrow => (6..=11).map(|e| 1u64 << e).collect(),
        _ => vec![10, 100, 1000, 10_000],
    }
}

/// `t_final · 2^{-6}, …, t_final · 2^{-12}`.
pub fn default_taus(t_final: f64) -> Vec<f64> {
    (6..=12).map(|e| t_final * 0.5f64.powi(e)).collect()
}

fn resolve_seeds(spec: &mut ExperimentSpec) {
    if let PotentialSpec::PowerLaw { seed, .. } = &mut spec.potential {
        seed.get_or_insert(spec.seed);
    }
    if let InitialSpec::Rough { seed, .. } = &mut spec.initial {
        seed.get_or_insert(spec.seed.wrapping_add(1));
    }
}

impl RawSpec {
    fn resolve(self) -> Result<ExperimentSpec> {
        let kind = self.kind.ok_or_else(|| Error::validation("kind", "missing experiment kind"))?;
        let grid_size = self.grid_size.unwrap_or(match kind {
            ExperimentKind::Regularity => 1024,
            _ => 2048,
        });
        let t_final = self.t_final.unwrap_or(match kind {
            ExperimentKind::Regularity => 2.0,
            _ => 1.0,
        });
        let schemes = self.schemes.unwrap_or_else(|| match kind {
            ExperimentKind::Comparison => SchemeId::ALL.to_vec(),
            _ => vec![SchemeId::Lri],
        });
        let mut spec = ExperimentSpec {
            kind,
            name: self.name.unwrap_or_else(|| "custom".to_string()),
            grid_size,
            lambda: self.lambda.unwrap_or(1.0),
            t_final,
            seed: self.seed.unwrap_or(1),
            potential: self.potential.unwrap_or(PotentialSpec::Zero {}),
            initial: self.initial.unwrap_or(InitialSpec::Smooth {}),
            schemes,
            tau: self.tau.unwrap_or(1e-4),
            taus: self.taus.unwrap_or_else(|| default_taus(t_final)),
            reference_refinement: self.reference_refinement.unwrap_or(REFERENCE_REFINEMENT),
            decay_window: self.decay_window.unwrap_or([8, grid_size / 8]),
            filter: self.filter.unwrap_or(false),
            epsilon0: self.epsilon0.unwrap_or_else(|| default_epsilon0(0.0, f64::INFINITY)),
            illposed: self.illposed.map(RawIllposed::resolve),
            output: self.output,
        };
        resolve_seeds(&mut spec);
        Ok(spec)
    }
}

/// Parses a TOML spec and fills in every default.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| Error::Parse {
        what: "experiment spec".to_string(),
        message: e.to_string(),
    })?;
    let spec = raw.resolve()?;
    validate_spec(&spec)?;
    Ok(spec)
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    parse_spec(&fs::read_to_string(path)?)
}

pub fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    Grid::new(spec.grid_size).map_err(|e| Error::validation("grid_size", e.to_string()))?;
    if !spec.lambda.is_finite() {
        return Err(Error::validation("lambda", "must be finite"));
    }
    if !(spec.t_final > 0.0 && spec.t_final.is_finite()) {
        return Err(Error::validation("t_final", "must be positive"));
    }
    if !(spec.epsilon0 > 0.0 && spec.epsilon0 < 0.5) {
        return Err(Error::validation("epsilon0", "must lie in (0, 1/2)"));
    }
    if spec.schemes.is_empty() {
        return Err(Error::validation("schemes", "needs at least one scheme"));
    }
    if spec.reference_refinement == 0 {
        return Err(Error::validation("reference_refinement", "must be >= 1"));
    }
    match &spec.potential {
        PotentialSpec::PowerLaw { seed: None, .. } => {
            return Err(Error::validation("potential.seed", "random potentials need an explicit seed"));
        }
        PotentialSpec::PowerLaw { delta, .. } if !(*delta >= 0.0) => {
            return Err(Error::validation("potential.delta", "must be >= 0"));
        }
        _ => {}
    }
    if let InitialSpec::Rough { seed: None, .. } = spec.initial {
        return Err(Error::validation("initial.seed", "random initial data need an explicit seed"));
    }
    match spec.kind {
        ExperimentKind::Regularity => {
            check_divides("tau", spec.t_final, spec.tau)?;
            let [lo, hi] = spec.decay_window;
            if lo < 2 || lo >= hi || hi > spec.grid_size / 2 - 1 {
                return Err(Error::validation(
                    "decay_window",
                    format!("needs 2 <= k_min < k_max <= {}", spec.grid_size / 2 - 1),
                ));
            }
        }
        ExperimentKind::Convergence | ExperimentKind::Comparison => {
            if spec.taus.len() < 3 {
                return Err(Error::validation("taus", "needs at least three step sizes"));
            }
            if spec.taus.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::validation("taus", "must be strictly decreasing"));
            }
            for &tau in &spec.taus {
                check_divides("taus", spec.t_final, tau)?;
            }
        }
        ExperimentKind::Illposed => {
            let plan = spec
                .illposed
                .as_ref()
                .ok_or_else(|| Error::validation("illposed", "ILLPOSED experiments need an [illposed] table"))?;
            if plan.sweep.is_empty() || plan.sweep.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation("illposed.sweep", "must be non-empty and strictly increasing"));
            }
            for &param in &plan.sweep {
                plan.spec.with_param(param).validate()?;
            }
        }
    }
    Ok(())
}

fn check_divides(field: &str, t_final: f64, tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::validation(field, format!("step {tau} must be positive")));
    }
    step_count(t_final, tau)
        .map(|_| ())
        .map_err(|_| Error::validation(field, format!("step {tau} does not divide t_final = {t_final}")))
}

impl ExperimentSpec {
    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_size)
    }

    pub fn build_potential(&self, grid: &Grid) -> Result<Potential> {
        match &self.potential {
            PotentialSpec::Zero {} => Ok(Potential::zero(grid)),
            PotentialSpec::PowerLaw {
                delta,
                re_range,
                im_range,
                dc,
                seed,
            } => gen_uniform_potential(grid, *delta, *re_range, *im_range, *dc, seed.unwrap_or(self.seed)),
            PotentialSpec::DeltaComb { centers, amplitude } => gen_delta_comb(grid, centers, *amplitude),
            PotentialSpec::Table { path } => {
                let pot = Potential::from_csv(fs::File::open(path)?)?;
                if pot.grid() != grid {
                    return Err(Error::GridMismatch {
                        left: pot.grid().n_modes(),
                        right: grid.n_modes(),
                    });
                }
                Ok(pot)
            }
        }
    }

    pub fn build_initial(&self, grid: &Grid) -> Result<SpectralField> {
        match &self.initial {
            InitialSpec::Smooth {} => Ok(smooth_initial(grid)),
            InitialSpec::Rough {
                decay,
                amp_range,
                imag_range,
                seed,
            } => gen_rough_initial(
                grid,
                &RoughInitSpec {
                    decay: *decay,
                    amp_range: *amp_range,
                    imag_range: *imag_range,
                    seed: seed.unwrap_or(self.seed.wrapping_add(1)),
                },
            ),
            InitialSpec::PlaneWave { wavenumber, amplitude } => {
                if !grid.contains(*wavenumber) {
                    return Err(Error::param("wavenumber", "outside the grid"));
                }
                let mut u = SpectralField::zeros(grid);
                u.set_coeff(*wavenumber, Complex64::new(*amplitude, 0.0));
                Ok(u)
            }
        }
    }

    pub fn stepper_config(&self, tau: f64) -> Result<StepperConfig> {
        Ok(StepperConfig::new(tau, self.lambda)?
            .with_epsilon0(self.epsilon0)?
            .with_filter(self.filter))
    }
}

/// Settings that replace the matching fields of a resolved spec, as given on
/// the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub grid_size: Option<usize>,
    /// Single-run step. For sweeps this is the largest step and the sweep
    /// keeps its length, halving from there.
    pub tau: Option<f64>,
    /// Rescales the sweep along with the final time.
    pub t_final: Option<f64>,
    pub lambda: Option<f64>,
    /// Reseeds the potential (`seed`) and the initial data (`seed + 1`).
    pub seed: Option<u64>,
    pub schemes: Option<Vec<SchemeId>>,
}

impl ExperimentSpec {
    /// Applies `o` and validates the result. A default decay window follows
    /// a new grid size, with its lower end reduced on grids below 128.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(n) = o.grid_size {
            if self.decay_window == [8, self.grid_size / 8] {
                self.decay_window = [(n / 16).clamp(2, 8), n / 8];
            }
            self.grid_size = n;
        }
        if let Some(t) = o.t_final {
            let ratio = t / self.t_final;
            for tau in &mut self.taus {
                *tau *= ratio;
            }
            self.t_final = t;
        }
        if let Some(tau) = o.tau {
            self.tau = tau;
            if matches!(self.kind, ExperimentKind::Convergence | ExperimentKind::Comparison) {
                self.taus = (0..self.taus.len() as i32).map(|i| tau * 0.5f64.powi(i)).collect();
            }
        }
        if let Some(lambda) = o.lambda {
            self.lambda = lambda;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
            if let PotentialSpec::PowerLaw { seed: s, .. } = &mut self.potential {
                *s = Some(seed);
            }
            if let InitialSpec::Rough { seed: s, .. } = &mut self.initial {
                *s = Some(seed.wrapping_add(1));
            }
        }
        if let Some(schemes) = &o.schemes {
            self.schemes = schemes.clone();
        }
        validate_spec(&self)?;
        Ok(self)
    }
}

/// `u₀(x) = cos x / (2 + sin 2x)` sampled on the grid.
pub fn smooth_initial(grid: &Grid) -> SpectralField {
    SpectralField::from_physical_fn(grid, |x| Complex64::new(x.cos() / (2.0 + (2.0 * x).sin()), 0.0))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Short hash of a field's coefficients, used to tie rows to a reference run.
pub fn field_fingerprint(u: &SpectralField) -> String {
    let mut hasher = Sha256::new();
    for (_, c) in u.modes() {
        hasher.update(c.re.to_le_bytes());
        hasher.update(c.im.to_le_bytes());
    }
    hex(&hasher.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub k: i64,
    pub abs_uk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub scheme: SchemeId,
    pub tau: f64,
    /// `None` when the run diverged.
    pub error: Option<f64>,
    pub order_pairwise: Option<f64>,
    pub reference: String,
}

impl ErrorRow {
    pub fn status(&self) -> &'static str {
        if self.error.is_some() {
            "ok"
        } else {
            "diverged"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Rows {
    Regularity(Vec<SpectrumRow>),
    Convergence(Vec<ErrorRow>),
    Comparison(Vec<ErrorRow>),
    Illposed(Vec<InflationPoint>),
}

/// Regression of `‖A₂‖` against the family's growth profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub regressor: String,
    pub slope: f64,
    pub intercept: f64,
    pub correlation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub decay: Option<DecayFit>,
    pub convergence: BTreeMap<SchemeId, ConvergenceFit>,
    pub growth: Option<GrowthFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub reference_policy: Option<String>,
    pub reference_fingerprint: Option<String>,
    pub filter_active: bool,
    pub n_filter: Option<usize>,
    pub fd_discretization: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec: ExperimentSpec,
    pub fingerprint: String,
    pub rows: Rows,
    pub fits: Fits,
    pub metadata: RunMetadata,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultRecord> {
    validate_spec(spec)?;
    let grid = spec.grid()?;
    let mut metadata = RunMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        reference_policy: None,
        reference_fingerprint: None,
        filter_active: false,
        n_filter: None,
        fd_discretization: spec
            .schemes
            .contains(&SchemeId::Fd)
            .then(|| "centered second-order stencil, periodic, cyclic tridiagonal solve".to_string()),
    };
    let mut fits = Fits::default();
    let rows = match spec.kind {
        ExperimentKind::Regularity => {
            let (rows, fit) = run_regularity(spec, &grid, &mut metadata)?;
            fits.decay = Some(fit);
            Rows::Regularity(rows)
        }
        ExperimentKind::Convergence => {
            let rows = run_convergence(spec, &grid, &mut metadata)?;
            fits.convergence = fit_orders(&rows);
            Rows::Convergence(rows)
        }
        ExperimentKind::Comparison => {
            let rows = run_comparison(spec, &grid, &mut metadata)?;
            fits.convergence = fit_orders(&rows);
            Rows::Comparison(rows)
        }
        ExperimentKind::Illposed => {
            let plan = spec.illposed.as_ref().expect("validated");
            let points = norm_inflation_curve(&plan.spec, &plan.sweep)?;
            fits.growth = growth_fit(&plan.spec, &points);
            Rows::Illposed(points)
        }
    };
    Ok(ResultRecord {
        spec: spec.clone(),
        fingerprint: spec.fingerprint(),
        rows,
        fits,
        metadata,
    })
}

fn note_filter(spec: &ExperimentSpec, grid: &Grid, tau: f64, metadata: &mut RunMetadata) -> Result<()> {
    if spec.schemes.contains(&SchemeId::Lri) || spec.kind == ExperimentKind::Regularity {
        let cfg = spec.stepper_config(tau)?;
        metadata.filter_active |= cfg.filter_active(grid);
        metadata.n_filter = Some(cfg.n_filter());
    }
    Ok(())
}

fn run_regularity(
    spec: &ExperimentSpec,
    grid: &Grid,
    metadata: &mut RunMetadata,
) -> Result<(Vec<SpectrumRow>, DecayFit)> {
    let xi = spec.build_potential(grid)?;
    let u0 = spec.build_initial(grid)?;
    let cfg = spec.stepper_config(spec.tau)?;
    note_filter(spec, grid, spec.tau, metadata)?;
    let run = evolve(&u0, &xi, SchemeId::Lri, &cfg, spec.t_final, &[])?;
    let [lo, hi] = spec.decay_window;
    let fit = decay_slope(&run.final_state, lo, hi)?;
    let rows = run
        .final_state
        .modes()
        .map(|(k, c)| SpectrumRow { k, abs_uk: c.norm() })
        .collect();
    Ok((rows, fit))
}

fn reference_policy(spec: &ExperimentSpec, scheme: &str) -> String {
    format!(
        "{scheme} with tau = min(taus)/{} on the same {}-point grid",
        spec.reference_refinement, spec.grid_size
    )
}

fn reference_tau(spec: &ExperimentSpec) -> f64 {
    spec.taus.last().copied().expect("validated sweep") / spec.reference_refinement as f64
}

fn run_convergence(spec: &ExperimentSpec, grid: &Grid, metadata: &mut RunMetadata) -> Result<Vec<ErrorRow>> {
    let xi = spec.build_potential(grid)?;
    let u0 = spec.build_initial(grid)?;
    let tau_ref = reference_tau(spec);
    note_filter(spec, grid, tau_ref, metadata)?;
    metadata.reference_policy = Some(reference_policy(spec, "same scheme"));
    // one self-reference per scheme
    let references: Vec<(SchemeId, SpectralField)> = spec
        .schemes
        .par_iter()
        .map(|&scheme| {
            let cfg = spec.stepper_config(tau_ref)?;
            Ok((scheme, evolve(&u0, &xi, scheme, &cfg, spec.t_final, &[])?.final_state))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(SchemeId, f64)> = spec
        .schemes
        .iter()
        .flat_map(|&s| spec.taus.iter().map(move |&t| (s, t)))
        .collect();
    let mut rows: Vec<ErrorRow> = cells
        .par_iter()
        .map(|&(scheme, tau)| {
            let reference = &references.iter().find(|(s, _)| *s == scheme).expect("reference").1;
            let cfg = spec.stepper_config(tau)?;
            let run = evolve(&u0, &xi, scheme, &cfg, spec.t_final, &[])?;
            Ok(ErrorRow {
                scheme,
                tau,
                error: Some(relative_l2_error(&run.final_state, reference)?),
                order_pairwise: None,
                reference: field_fingerprint(reference),
            })
        })
        .collect::<Result<_>>()?;
    sort_rows(&mut rows);
    fill_pairwise(&mut rows);
    Ok(rows)
}

fn run_comparison(spec: &ExperimentSpec, grid: &Grid, metadata: &mut RunMetadata) -> Result<Vec<ErrorRow>> {
    let xi = spec.build_potential(grid)?;
    let u0 = spec.build_initial(grid)?;
    let tau_ref = reference_tau(spec);
    note_filter(spec, grid, tau_ref, metadata)?;
    metadata.reference_policy = Some(reference_policy(spec, "LRI"));
    let reference = evolve(&u0, &xi, SchemeId::Lri, &spec.stepper_config(tau_ref)?, spec.t_final, &[])?.final_state;
    let reference_id = field_fingerprint(&reference);
    metadata.reference_fingerprint = Some(reference_id.clone());
    let cells: Vec<(SchemeId, f64)> = spec
        .schemes
        .iter()
        .flat_map(|&s| spec.taus.iter().map(move |&t| (s, t)))
        .collect();
    let mut rows: Vec<ErrorRow> = cells
        .par_iter()
        .map(|&(scheme, tau)| {
            let cfg = spec.stepper_config(tau)?;
            let error = match evolve(&u0, &xi, scheme, &cfg, spec.t_final, &[]) {
                Ok(run) => Some(relative_l2_error(&run.final_state, &reference)?).filter(|e| e.is_finite()),
                Err(Error::BlowUp { .. }) | Err(Error::SingularSystem { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(ErrorRow {
                scheme,
                tau,
                error,
                order_pairwise: None,
                reference: reference_id.clone(),
            })
        })
        .collect::<Result<_>>()?;
    sort_rows(&mut rows);
    fill_pairwise(&mut rows);
    Ok(rows)
}

/// Scheme order, then decreasing step.
fn sort_rows(rows: &mut [ErrorRow]) {
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(b.tau.total_cmp(&a.tau)));
}

fn fill_pairwise(rows: &mut [ErrorRow]) {
    for i in 1..rows.len() {
        let (prev, cur) = (&rows[i - 1], &rows[i]);
        if prev.scheme != cur.scheme {
            continue;
        }
        if let (Some(e0), Some(e1)) = (prev.error, cur.error) {
            if e0 > 0.0 && e1 > 0.0 {
                rows[i].order_pairwise = Some((e0 / e1).log2() / (prev.tau / cur.tau).log2());
            }
        }
    }
}

fn fit_orders(rows: &[ErrorRow]) -> BTreeMap<SchemeId, ConvergenceFit> {
    let mut by_scheme: BTreeMap<SchemeId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = by_scheme.entry(row.scheme).or_default();
        if let Some(e) = row.error {
            entry.0.push(row.tau);
            entry.1.push(e);
        }
    }
    by_scheme
        .into_iter()
        .filter_map(|(scheme, (taus, errors))| convergence_order(&taus, &errors).ok().map(|fit| (scheme, fit)))
        .collect()
}

/// Growth profile the lower bound predicts for each family.
pub fn growth_profile(spec: &IllposedSpec) -> (&'static str, f64) {
    match spec.family {
        IllposedFamily::Thm3Pinf => ("sqrt(ln(2*m1+1))", ((2 * spec.m1 + 1) as f64).ln().sqrt()),
        IllposedFamily::Thm3Finp => {
            let sum: f64 = (2..=spec.m1)
                .map(|k| (k as f64).recip() * (k as f64).ln().powf(-2.0 * spec.alpha))
                .sum();
            ("sqrt(sum_k k^-1 ln(k)^-2alpha)", sum.sqrt())
        }
        IllposedFamily::Thm4Hs => (
            "m1^(gamma-beta-3/2)",
            (spec.m1 as f64).powf(spec.gamma - spec.beta - 1.5),
        ),
        IllposedFamily::Thm5LogGrow => ("ln(n_loc)", (spec.n_loc as f64).ln()),
    }
}

pub fn growth_fit(spec: &IllposedSpec, points: &[InflationPoint]) -> Option<GrowthFit> {
    if points.len() < 2 {
        return None;
    }
    let mut name = "";
    let xs: Vec<f64> = points
        .iter()
        .map(|p| {
            let (n, x) = growth_profile(&spec.with_param(p.param));
            name = n;
            x
        })
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.norm).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Some(GrowthFit {
        regressor: name.to_string(),
        slope,
        intercept,
        correlation: correlation(&xs, &ys),
    })
}

/// CSV body for the record's rows, with the fixed header of its kind.
pub fn results_csv(record: &ResultRecord) -> String {
    let mut out = String::new();
    match &record.rows {
        Rows::Regularity(rows) => {
            out.push_str("k,abs_uk\n");
            let mut rows = rows.clone();
            rows.sort_by_key(|r| r.k);
            for r in rows {
                let _ = writeln!(out, "{},{:e}", r.k, r.abs_uk);
            }
        }
        Rows::Convergence(rows) => {
            out.push_str("tau,error,order_pairwise\n");
            for r in rows {
                let _ = writeln!(out, "{:e},{},{}", r.tau, opt(r.error), opt(r.order_pairwise));
            }
        }
        Rows::Comparison(rows) => {
            out.push_str("scheme,tau,error,order_pairwise,status\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{:e},{},{},{}",
                    r.scheme,
                    r.tau,
                    opt(r.error),
                    opt(r.order_pairwise),
                    r.status()
                );
            }
        }
        Rows::Illposed(points) => {
            out.push_str("param,norm,lower_bound\n");
            for p in points {
                let _ = writeln!(out, "{},{:e},{:e}", p.param, p.norm, p.lower_bound);
            }
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Sidecar JSON: resolved spec, fingerprint, fits and run metadata.
pub fn metadata_json(record: &ResultRecord) -> String {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        fingerprint: &'a str,
        spec: &'a ExperimentSpec,
        fits: &'a Fits,
        metadata: &'a RunMetadata,
    }
    let sidecar = Sidecar {
        fingerprint: &record.fingerprint,
        spec: &record.spec,
        fits: &record.fits,
        metadata: &record.metadata,
    };
    serde_json::to_string_pretty(&sidecar).expect("record serializes")
}

/// File stem used for a record's outputs.
pub fn results_stem(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Regularity => "regularity",
        ExperimentKind::Convergence => "convergence",
        ExperimentKind::Comparison => "comparison",
        ExperimentKind::Illposed => "illposed",
    }
}

/// Writes `<stem>.csv` and `<stem>.metadata.json` into `dir`.
pub fn write_results(record: &ResultRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let stem = results_stem(record.spec.kind);
    fs::write(dir.join(format!("{stem}.csv")), results_csv(record))?;
    fs::write(dir.join(format!("{stem}.metadata.json")), metadata_json(record))?;
    Ok(())
}

/// Names of the built-in presets.
pub const PRESETS: [&str; 11] = [
    "reg-6.1",
    "reg-6.2",
    "reg-6.3",
    "conv-1o4",
    "conv-3o4",
    "conv-1",
    "comp-delta",
    "comp-rough",
    "comp-L2data",
    "illposed-thm3",
    "illposed-thm5",
];

/// Default seed of every preset. Random potentials use `seed`, random
/// initial data `seed + 1`.
pub const PRESET_SEED: u64 = 1;

fn base(kind: ExperimentKind, name: &str) -> ExperimentSpec {
    let raw = RawSpec {
        kind: Some(kind),
        name: Some(name.to_string()),
        seed: Some(PRESET_SEED),
        ..RawSpec::default()
    };
    raw.resolve().expect("kind is set")
}

fn powerlaw(delta: f64, bound: f64, dc: Option<f64>, im: bool) -> PotentialSpec {
    PotentialSpec::PowerLaw {
        delta,
        re_range: Interval::symmetric(bound),
        im_range: Interval::symmetric(if im { bound } else { 0.0 }),
        dc,
        seed: Some(PRESET_SEED),
    }
}

fn rough(decay: f64, re: Interval, im: Option<Interval>) -> InitialSpec {
    InitialSpec::Rough {
        decay,
        amp_range: re,
        imag_range: im,
        seed: Some(PRESET_SEED + 1),
    }
}

fn three_deltas() -> PotentialSpec {
    PotentialSpec::DeltaComb {
        centers: vec![0.0, 2.0, -2.0],
        amplitude: -1.0,
    }
}

/// The built-in experiment `name`, see [`PRESETS`].
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    use ExperimentKind::*;
    let spec = match name {
        "reg-6.1" => ExperimentSpec {
            potential: powerlaw(0.0, 2.0, None, false),
            ..base(Regularity, name)
        },
        "reg-6.2" => ExperimentSpec {
            potential: powerlaw(0.26, 4.0, Some(1.0), true),
            ..base(Regularity, name)
        },
        "reg-6.3" => ExperimentSpec {
            potential: powerlaw(0.6, 5.0, Some(1.0), true),
            ..base(Regularity, name)
        },
        "conv-1o4" => ExperimentSpec {
            lambda: -2.0,
            potential: PotentialSpec::DeltaComb {
                centers: vec![0.0],
                amplitude: -0.2,
            },
            initial: rough(2.55, Interval::new(0.0, 1.0), None),
            ..base(Convergence, name)
        },
        "conv-3o4" | "conv-1" => ExperimentSpec {
            lambda: 4.0,
            potential: powerlaw(if name == "conv-1" { 0.76 } else { 0.51 }, 5.0, Some(1.0), true),
            initial: rough(2.55, Interval::new(0.0, 1.0), None),
            ..base(Convergence, name)
        },
        "comp-delta" => ExperimentSpec {
            lambda: -2.0,
            potential: three_deltas(),
            initial: rough(2.51, Interval::new(0.0, 1.0 / 3.0), None),
            ..base(Comparison, name)
        },
        "comp-rough" => ExperimentSpec {
            lambda: -0.05,
            potential: PotentialSpec::PowerLaw {
                delta: 0.0,
                re_range: Interval::new(0.0, 4.0),
                im_range: Interval::new(0.0, 0.0),
                dc: None,
                seed: Some(PRESET_SEED),
            },
            initial: rough(2.51, Interval::new(0.0, 1.0 / 3.0), Some(Interval::new(0.0, 0.2))),
            ..base(Comparison, name)
        },
        "comp-L2data" => ExperimentSpec {
            lambda: -2.0,
            potential: three_deltas(),
            initial: rough(1.1, Interval::new(0.0, 1.0 / 3.0), None),
            ..base(Comparison, name)
        },
        "illposed-thm3" | "illposed-thm5" => {
            let family = if name == "illposed-thm3" {
                IllposedFamily::Thm3Pinf
            } else {
                IllposedFamily::Thm5LogGrow
            };
            ExperimentSpec {
                illposed: Some(IllposedPlan {
                    spec: IllposedSpec::new(family),
                    sweep: default_sweep(family),
                }),
                ..base(Illposed, name)
            }
        }
        other => {
            return Err(Error::validation(
                "preset",
                format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
            ))
        }
    };
    validate_spec(&spec)?;
    Ok(spec)
}
